#pragma once

#include "cogsc/tensor.hpp"
#include "cogsc/nn.hpp"
#include "cogsc/params.hpp"
#include "cogsc/layers.hpp"
#include "cogsc/channel.hpp"
#include "cogsc/pipeline.hpp"
#include "cogsc/knowledge.hpp"
#include "cogsc/detector.hpp"
#include "cogsc/scene.hpp"
#include "cogsc/config.hpp"
#include "cogsc/report.hpp"
#include "cogsc/harness.hpp"
