#pragma once

// Thin parameter-owning wrappers around the tensor ops.

#include <random>
#include <string>

#include "cogsc/nn.hpp"
#include "cogsc/params.hpp"

namespace cogsc {

struct Conv {
    Tensor weight;  // [cout x cin x k x k]
    Tensor bias;    // [cout]
    std::size_t stride = 1;
    std::size_t padding = 0;

    static Conv make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                     std::size_t stride, std::size_t padding, std::mt19937_64& rng) {
        Conv c;
        c.weight = ps.add(name + ".weight", xavier_uniform({cout, cin, k, k}, cin * k * k, cout * k * k, rng));
        c.bias = ps.add(name + ".bias", zeros_param({cout}));
        c.stride = stride;
        c.padding = padding;
        return c;
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, stride, padding, bias); }
};

struct Deconv {
    Tensor weight;  // [cin x cout x k x k]
    Tensor bias;    // [cout]
    std::size_t stride = 1;
    std::size_t padding = 0;

    static Deconv make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                       std::size_t stride, std::size_t padding, std::mt19937_64& rng) {
        Deconv d;
        d.weight = ps.add(name + ".weight", xavier_uniform({cin, cout, k, k}, cin * k * k, cout * k * k, rng));
        d.bias = ps.add(name + ".bias", zeros_param({cout}));
        d.stride = stride;
        d.padding = padding;
        return d;
    }

    Tensor operator()(const Tensor& x) const { return deconv2d(x, weight, stride, padding, bias); }
};

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]

    static Linear make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                       std::mt19937_64& rng, bool with_bias = true) {
        Linear l;
        l.weight = ps.add(name + ".weight", xavier_uniform({in, out}, in, out, rng));
        if (with_bias) l.bias = ps.add(name + ".bias", zeros_param({out}));
        return l;
    }

    Tensor operator()(const Tensor& x) const { return fully_connected(x, weight, bias); }
};

}  // namespace cogsc
