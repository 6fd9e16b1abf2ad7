#pragma once

// Instance files are JSON documents:
//
//   {
//     "format": "dsblo-instance", "version": 1,
//     "generator": {"version", "seed", "distribution", "random_rows",
//                   "box_radius", "feasibility_margin"},
//     "dims": {"d_u", "d_l", "rows", "components"},
//     "mu_g": 2.0,
//     "Q1": {"rows", "cols", "data"},   "Q2": {...},
//     "A": {...}, "B": {...}, "b": [...],
//     "linear_x": {...}, "linear_y": {...}   // one column per component
//   }
//
// Matrices are row-major in "data". Doubles are written with enough digits
// to round-trip exactly.

#include "dsblo/problem.hpp"

#include <json.hpp>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace dsblo {

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const char* name) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw Error(ErrorCode::Io, std::string("matrix '") + name + "' payload size mismatch");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)].get<double>();
  return m;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

class Fnv1a {
 public:
  void add_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  void add(std::uint64_t v) { add_bytes(&v, sizeof v); }
  void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
  void add(const Matrix& m) {
    add(static_cast<std::uint64_t>(m.rows()));
    add(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) add(m(i, j));
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

}  // namespace detail

inline nlohmann::json to_json(const QuadraticBilevel& inst) {
  const auto& info = inst.info();
  const auto& poly = inst.constraints();
  nlohmann::json j;
  j["format"] = "dsblo-instance";
  j["version"] = 1;
  j["generator"] = {{"version", info.version},
                    {"seed", info.seed},
                    {"distribution", info.distribution},
                    {"random_rows", info.random_rows},
                    {"box_radius", info.box_radius},
                    {"feasibility_margin", info.feasibility_margin}};
  j["dims"] = {{"d_u", inst.dim_upper()},
               {"d_l", inst.dim_lower()},
               {"rows", poly.rows()},
               {"components", inst.num_components()}};
  j["mu_g"] = inst.mu_g();
  j["Q1"] = detail::matrix_to_json(inst.q1());
  j["Q2"] = detail::matrix_to_json(inst.q2());
  j["A"] = detail::matrix_to_json(poly.A);
  j["B"] = detail::matrix_to_json(poly.B);
  j["b"] = detail::vector_to_json(poly.b);
  j["linear_x"] = detail::matrix_to_json(inst.linear_x());
  j["linear_y"] = detail::matrix_to_json(inst.linear_y());
  return j;
}

inline QuadraticBilevel instance_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "dsblo-instance") {
      throw Error(ErrorCode::Io, "not a dsblo instance document");
    }
    if (j.at("version").get<int>() != 1) {
      throw Error(ErrorCode::Io, "unsupported instance version");
    }
    GeneratorInfo info;
    const auto& gen = j.at("generator");
    info.version = gen.at("version").get<int>();
    info.seed = gen.at("seed").get<std::uint64_t>();
    info.distribution = gen.at("distribution").get<std::string>();
    info.random_rows = gen.at("random_rows").get<Index>();
    info.box_radius = gen.at("box_radius").get<double>();
    info.feasibility_margin = gen.at("feasibility_margin").get<double>();

    Polyhedron poly{detail::matrix_from_json(j.at("A"), "A"), detail::matrix_from_json(j.at("B"), "B"),
                    detail::vector_from_json(j.at("b"))};
    QuadraticBilevel inst(detail::matrix_from_json(j.at("Q1"), "Q1"),
                          detail::matrix_from_json(j.at("Q2"), "Q2"),
                          detail::matrix_from_json(j.at("linear_x"), "linear_x"),
                          detail::matrix_from_json(j.at("linear_y"), "linear_y"), std::move(poly),
                          std::move(info));
    const auto& dims = j.at("dims");
    if (dims.at("d_u").get<Index>() != inst.dim_upper() ||
        dims.at("d_l").get<Index>() != inst.dim_lower() ||
        dims.at("rows").get<Index>() != inst.constraints().rows() ||
        dims.at("components").get<Index>() != inst.num_components()) {
      throw Error(ErrorCode::Io, "declared dims disagree with the matrix payloads");
    }
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed instance document: ") + e.what());
  }
}

inline void save_instance(const QuadraticBilevel& inst, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << to_json(inst).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline QuadraticBilevel load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
  return instance_from_json(j);
}

/// 64-bit FNV-1a over the dimensions and exact bit patterns of every
/// numeric field.
inline std::uint64_t fingerprint(const QuadraticBilevel& inst) {
  detail::Fnv1a h;
  h.add(inst.q1());
  h.add(inst.q2());
  h.add(inst.constraints().A);
  h.add(inst.constraints().B);
  h.add(Matrix(inst.constraints().b));
  h.add(inst.linear_x());
  h.add(inst.linear_y());
  return h.value();
}

inline std::string fingerprint_hex(const QuadraticBilevel& inst) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint(inst)));
  return buf;
}

}  // namespace dsblo
