#pragma once

// Umbrella header: the whole codec, training and evaluation surface.

#include "hbm/autodiff/grad_check.hpp"
#include "hbm/autodiff/optimizer.hpp"
#include "hbm/codec/bitstream.hpp"
#include "hbm/codec/model.hpp"
#include "hbm/codec/pipeline.hpp"
#include "hbm/eval/io.hpp"
#include "hbm/eval/metrics.hpp"
#include "hbm/eval/report.hpp"
#include "hbm/eval/run_config.hpp"
#include "hbm/eval/synth.hpp"
#include "hbm/eval/train.hpp"
