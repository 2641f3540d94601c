#pragma once

#include "autodiff.hpp"
#include "rng.hpp"
#include "core.hpp"
#include "nn.hpp"
#include "encoders.hpp"
#include "pyramid.hpp"
#include "localizer.hpp"
#include "classifiers.hpp"
#include "alignment.hpp"
#include "eval.hpp"
#include "training.hpp"
#include "synthdata.hpp"
