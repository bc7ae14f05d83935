#ifndef SVYDPD_SVYDPD_HPP
#define SVYDPD_SVYDPD_HPP

/**
 * \mainpage svydpd
 *
 * Header-only toolkit for robust polytomous logistic regression on
 * stratified cluster samples: density power divergence estimation with
 * survey weights, sandwich covariances, overdispersion and design-effect
 * estimation, Wald tests with power and sample-size planning, influence
 * diagnostics, and seeded overdispersed-multinomial simulation studies.
 */

#include "svydpd/errors.hpp"
#include "svydpd/types.hpp"
#include "svydpd/model.hpp"
#include "svydpd/objective.hpp"
#include "svydpd/fit.hpp"
#include "svydpd/covariance.hpp"
#include "svydpd/overdispersion.hpp"
#include "svydpd/distributions.hpp"
#include "svydpd/inference.hpp"
#include "svydpd/robustness.hpp"
#include "svydpd/rng.hpp"
#include "svydpd/simulate.hpp"
#include "svydpd/io.hpp"

#endif // SVYDPD_SVYDPD_HPP
