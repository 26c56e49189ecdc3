#pragma once

#include "segnet/nn/batch_norm.hpp"
#include "segnet/nn/conv.hpp"
#include "segnet/nn/loss.hpp"
#include "segnet/nn/pooling.hpp"
#include "segnet/nn/resample.hpp"
#include "segnet/tensor.hpp"
