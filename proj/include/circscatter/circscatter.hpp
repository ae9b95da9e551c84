#pragma once

#include "circscatter/dataset.hpp"
#include "circscatter/error.hpp"
#include "circscatter/farfield.hpp"
#include "circscatter/geometry.hpp"
#include "circscatter/nn/layers.hpp"
#include "circscatter/nn/model_io.hpp"
#include "circscatter/nn/network.hpp"
#include "circscatter/nn/spec.hpp"
#include "circscatter/parallel.hpp"
#include "circscatter/pipeline.hpp"
#include "circscatter/random.hpp"
#include "circscatter/tensor.hpp"
#include "circscatter/training.hpp"
