#pragma once

#include <string>

#include "boxboot/errors.hpp"
#include "boxboot/synthdata.hpp"
#include "boxboot/trainer.hpp"

namespace boxboot {

// Flat `key = value` configuration; '#' starts a comment.  Unknown keys are
// hard errors, missing keys keep the defaults below.
struct RunConfig {
  SceneConfig scene;
  TrainConfig train;
  double pp_ratio = 0.18;
  bool export_masks = false;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

}  // namespace boxboot
