#pragma once

#include <stdexcept>
#include <string>

namespace stratus {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class RegionError : public Error {
 public:
  using Error::Error;
};

class UndefinedAccError : public Error {
 public:
  using Error::Error;
};

class TrainDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace stratus
