#pragma once

#include <string>
#include <vector>

namespace panda {

// One multiple-choice item. The format tag is carried verbatim from the
// input data ("MCQA" or "Dialogue MCQA").
struct MCQAItem {
  std::string context;
  std::string question;
  std::vector<std::string> options;
  int gold_index = 0;
  std::string format = "MCQA";
};

}  // namespace panda
