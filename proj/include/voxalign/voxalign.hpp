#pragma once

// Umbrella header pulling in the whole library.

#include "voxalign/ablate.hpp"
#include "voxalign/checkpoint.hpp"
#include "voxalign/commands.hpp"
#include "voxalign/common.hpp"
#include "voxalign/config.hpp"
#include "voxalign/diffusion.hpp"
#include "voxalign/eval.hpp"
#include "voxalign/grad_check.hpp"
#include "voxalign/io.hpp"
#include "voxalign/losses.hpp"
#include "voxalign/models.hpp"
#include "voxalign/ops.hpp"
#include "voxalign/optim.hpp"
#include "voxalign/retrieval.hpp"
#include "voxalign/rng.hpp"
#include "voxalign/synthdata.hpp"
#include "voxalign/tensor.hpp"
#include "voxalign/trainer.hpp"
