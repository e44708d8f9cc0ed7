#pragma once

#include "ivimlab/csv.hpp"
#include "ivimlab/error.hpp"
#include "ivimlab/fgr.hpp"
#include "ivimlab/grid.hpp"
#include "ivimlab/ivim.hpp"
#include "ivimlab/lm.hpp"
#include "ivimlab/mask_ops.hpp"
#include "ivimlab/nifti.hpp"
#include "ivimlab/phantom.hpp"
#include "ivimlab/report.hpp"
#include "ivimlab/stats.hpp"
