#pragma once

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "crp/errors.hpp"

namespace testutil {

// Catch matcher asserting that a crp::Error carries the expected kind.
class HasKind : public Catch::Matchers::MatcherGenericBase {
 public:
  explicit HasKind(crp::ErrorKind kind) : kind_(kind) {}

  bool match(const crp::Error& e) const { return e.kind() == kind_; }

  std::string describe() const override {
    return std::string("has kind ") + crp::to_string(kind_);
  }

 private:
  crp::ErrorKind kind_;
};

// Scratch directory removed on destruction; unique per instance so tests can
// run in any order.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto candidate = base / ("crp_test_" + std::to_string(rd()));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("could not create temp dir");
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

  std::string file(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    return p.string();
  }

  std::string sub(const std::string& name) const {
    auto p = path_ / name;
    std::filesystem::create_directories(p);
    return p.string();
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
