#pragma once

// Umbrella header: the full stability-analysis library.

#include "kfstab/matrix_core.hpp"
#include "kfstab/model.hpp"
#include "kfstab/fmo_partition.hpp"
#include "kfstab/observability.hpp"
#include "kfstab/phi_engine.hpp"
#include "kfstab/kalman_sim.hpp"
#include "kfstab/schedule_builder.hpp"
#include "kfstab/analysis.hpp"
#include "kfstab/config.hpp"
#include "kfstab/report.hpp"
