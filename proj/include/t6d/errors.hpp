#pragma once

#include <stdexcept>
#include <string>

namespace t6d {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define T6D_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

T6D_DEFINE_ERROR(DegenerateInput)
T6D_DEFINE_ERROR(EmptyMesh)
T6D_DEFINE_ERROR(CardinalityError)
T6D_DEFINE_ERROR(DegenerateBox)
T6D_DEFINE_ERROR(EmptyInput)
T6D_DEFINE_ERROR(ShapeError)
T6D_DEFINE_ERROR(GraphError)
T6D_DEFINE_ERROR(BehindCamera)
T6D_DEFINE_ERROR(ConfigError)
T6D_DEFINE_ERROR(IoError)
T6D_DEFINE_ERROR(NumericalFailure)

#undef T6D_DEFINE_ERROR

/// Parse failure carrying the offending location (line or JSON path) and field.
class ParseError : public Error {
 public:
  ParseError(const std::string& where, const std::string& field, const std::string& what)
      : Error(where + ": field '" + field + "': " + what), where_(where), field_(field) {}

  const std::string& where() const { return where_; }
  const std::string& field() const { return field_; }

 private:
  std::string where_;
  std::string field_;
};

}  // namespace t6d
