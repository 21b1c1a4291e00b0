#pragma once

#include "sacn/augmentation.hpp"
#include "sacn/autodiff.hpp"
#include "sacn/bundle_io.hpp"
#include "sacn/gat.hpp"
#include "sacn/gradcheck.hpp"
#include "sacn/graph.hpp"
#include "sacn/objectives.hpp"
#include "sacn/optimizer.hpp"
#include "sacn/pseudolabels.hpp"
#include "sacn/report.hpp"
#include "sacn/sparse.hpp"
#include "sacn/trainer.hpp"
