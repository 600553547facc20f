#pragma once

#include "quadfun/errors.hpp"
#include "quadfun/rng.hpp"
#include "quadfun/stats.hpp"
#include "quadfun/quadrature.hpp"
#include "quadfun/text.hpp"
#include "quadfun/basis.hpp"
#include "quadfun/estimated_basis.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/functionals.hpp"
#include "quadfun/bias_test.hpp"
#include "quadfun/regressors.hpp"
#include "quadfun/ensemble_basis.hpp"
#include "quadfun/universal.hpp"
#include "quadfun/config.hpp"
#include "quadfun/harness.hpp"
#include "quadfun/output.hpp"
