#pragma once

#include "magnet/analysis.hpp"
#include "magnet/binding.hpp"
#include "magnet/concept_parser.hpp"
#include "magnet/convert.hpp"
#include "magnet/encoder.hpp"
#include "magnet/error.hpp"
#include "magnet/neighbor_index.hpp"
#include "magnet/probes.hpp"
#include "magnet/safetensors.hpp"
#include "magnet/text_encoder.hpp"
#include "magnet/tokenizer.hpp"
