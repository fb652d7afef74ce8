#pragma once

#include "bed/checkpoint.hpp"
#include "bed/detect.hpp"
#include "bed/error.hpp"
#include "bed/inference.hpp"
#include "bed/model_ir.hpp"
#include "bed/pipeline.hpp"
#include "bed/quantize.hpp"
#include "bed/quantizer.hpp"
#include "bed/synth.hpp"
#include "bed/tensor.hpp"
