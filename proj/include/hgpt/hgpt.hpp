#pragma once

#include "hgpt/attention.hpp"
#include "hgpt/checkpoint.hpp"
#include "hgpt/common.hpp"
#include "hgpt/corpus.hpp"
#include "hgpt/factorize.hpp"
#include "hgpt/hierarchical.hpp"
#include "hgpt/ops.hpp"
#include "hgpt/optimizer.hpp"
#include "hgpt/tensor.hpp"
#include "hgpt/trainer.hpp"
#include "hgpt/transformer.hpp"
