#pragma once

// Value types, error kinds and the matrix text format shared by every module.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;

/// Relative rank tolerance used by every decomposition unless overridden.
inline constexpr double kRankTol = 1e-10;

enum class ErrorKind {
  InvalidInput,
  DegenerateInput,
  NotPSD,
  SingularPencil,
  DegeneratePair,
  ProjectionFailed,
  NotRankOne,
  GenerationFailed,
  ResourceLimit,
  Unsupported,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NotPSD: return "NotPSD";
    case ErrorKind::SingularPencil: return "SingularPencil";
    case ErrorKind::DegeneratePair: return "DegeneratePair";
    case ErrorKind::ProjectionFailed: return "ProjectionFailed";
    case ErrorKind::NotRankOne: return "NotRankOne";
    case ErrorKind::GenerationFailed: return "GenerationFailed";
    case ErrorKind::ResourceLimit: return "ResourceLimit";
    case ErrorKind::Unsupported: return "Unsupported";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.allFinite();
}

/// Largest absolute entry; zero for empty matrices.
template <typename Derived>
double max_abs(const Eigen::MatrixBase<Derived>& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Matrix text format: "rows cols" on the first line, then one line per row of
// space separated decimal literals printed with 17 significant digits.

inline void write_matrix(std::ostream& os, const Matrix& a) {
  os << a.rows() << ' ' << a.cols() << '\n';
  os << std::setprecision(17);
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      if (j) os << ' ';
      os << a(i, j);
    }
    os << '\n';
  }
}

inline Matrix read_matrix(std::istream& is) {
  long long rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 1 || cols < 1)
    throw Error(ErrorKind::InvalidInput, "matrix header must be 'rows cols' with positive sizes");
  Matrix a(rows, cols);
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) {
      std::string tok;
      if (!(is >> tok))
        throw Error(ErrorKind::InvalidInput, "matrix data truncated");
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || !std::isfinite(v))
        throw Error(ErrorKind::InvalidInput, "bad matrix entry '" + tok + "'");
      a(i, j) = v;
    }
  std::string extra;
  if (is >> extra)
    throw Error(ErrorKind::InvalidInput, "trailing data after matrix");
  return a;
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& a) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::InvalidInput, "cannot write " + path.string());
  write_matrix(os, a);
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::InvalidInput, "cannot read " + path.string());
  return read_matrix(is);
}

inline std::string to_text(const Matrix& a) {
  std::ostringstream os;
  write_matrix(os, a);
  return os.str();
}

}  // namespace mpc
