#ifndef SVYDPD_ERRORS_HPP
#define SVYDPD_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace svydpd {

/// Base class for every error thrown by this library.
class error : public std::runtime_error {
public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid arguments, malformed configuration, domain violations.
class input_error : public error {
public:
  explicit input_error(const std::string& msg) : error(msg) {}
};

/// File-format problems; carries the 1-based line number when known.
class parse_error : public input_error {
public:
  parse_error(const std::string& path, long line, const std::string& msg)
      : input_error(path + ":" + std::to_string(line) + ": " + msg),
        line_(line) {}
  long line() const { return line_; }

private:
  long line_;
};

/// Operation asked for on a branch it does not cover (e.g. the divergence
/// kernel at lambda == 0, which callers must replace by the likelihood).
class branch_error : public input_error {
public:
  explicit branch_error(const std::string& msg) : input_error(msg) {}
};

/// The parametrization cannot be pinned down by the data.  Carries the
/// indices of dependent design columns and, when it comes from a singular
/// information-type matrix, a basis of its null space (column-stacked).
class identifiability_error : public error {
public:
  explicit identifiability_error(const std::string& msg,
                                 std::vector<int> dependent_columns = {},
                                 std::vector<double> null_space = {})
      : error(msg),
        dependent_columns_(std::move(dependent_columns)),
        null_space_(std::move(null_space)) {}
  const std::vector<int>& dependent_columns() const { return dependent_columns_; }
  const std::vector<double>& null_space_basis() const { return null_space_; }

private:
  std::vector<int> dependent_columns_;
  std::vector<double> null_space_;
};

/// Numeric breakdown: underflow to zero probabilities, singular inner
/// matrices, loss of positive definiteness past tolerance.
class numeric_error : public error {
public:
  explicit numeric_error(const std::string& msg) : error(msg) {}
};

/// A documented precondition was violated (unequal cluster sizes where a
/// pooled estimator requires a common one, an off-null expansion point, ...).
class precondition_error : public error {
public:
  explicit precondition_error(const std::string& msg) : error(msg) {}
};

} // namespace svydpd

#endif // SVYDPD_ERRORS_HPP
