#pragma once

#include "deca/model.hpp"

namespace deca::testing {

/// J=3, 16x16 input, small enough for exhaustive gradient checks.
inline ModelConfig tiny_config(Variant variant = Variant::D3) {
  ModelConfig c;
  c.variant = variant;
  c.joints = 3;
  c.input_height = c.input_width = 16;
  c.recon_height = c.recon_width = 4;
  c.encoder_channels = {4, 4, 4, 34};
  c.encoder_strides = {2, 2, 1, 1};
  c.capsule_types = 2;
  c.decoder_hidden = 8;
  return c;
}

}  // namespace deca::testing
