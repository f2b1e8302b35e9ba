#pragma once

// Multivariate multi-quantile CAViaR toolkit: panel construction, quantile
// recursion, pinball objectives, GD/GA estimation, spillover inference,
// pseudo-impulse responses and tail-risk alerts.

#include "caviar/csv.hpp"
#include "caviar/dates.hpp"
#include "caviar/distributions.hpp"
#include "caviar/errors.hpp"
#include "caviar/inference.hpp"
#include "caviar/irf_alert.hpp"
#include "caviar/model.hpp"
#include "caviar/objective.hpp"
#include "caviar/optimize.hpp"
#include "caviar/panel.hpp"
#include "caviar/pipeline.hpp"
#include "caviar/version.hpp"
