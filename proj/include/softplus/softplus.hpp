#pragma once

#include "softplus/error.hpp"
#include "softplus/rng.hpp"
#include "softplus/polya_gamma.hpp"
#include "softplus/mvn.hpp"
#include "softplus/model.hpp"
#include "softplus/gibbs.hpp"
#include "softplus/geometry.hpp"
#include "softplus/data.hpp"
#include "softplus/model_io.hpp"
#include "softplus/diagnostics.hpp"
