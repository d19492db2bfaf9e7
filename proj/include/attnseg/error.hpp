#pragma once

#include <stdexcept>
#include <string>

namespace attnseg {

// Two failure classes, mirrored by the CLI exit codes (1 and 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace attnseg
