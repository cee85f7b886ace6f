#pragma once

#include "comfe/checkpoint.hpp"
#include "comfe/config.hpp"
#include "comfe/dataset.hpp"
#include "comfe/decoder.hpp"
#include "comfe/embeddings.hpp"
#include "comfe/errors.hpp"
#include "comfe/evaluate.hpp"
#include "comfe/export.hpp"
#include "comfe/inference.hpp"
#include "comfe/losses.hpp"
#include "comfe/model.hpp"
#include "comfe/optimizer.hpp"
#include "comfe/prototypes.hpp"
#include "comfe/synth.hpp"
#include "comfe/tensor.hpp"
#include "comfe/train_state.hpp"
#include "comfe/trainer.hpp"
#include "comfe/vmf.hpp"
