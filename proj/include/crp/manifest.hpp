#pragma once

// Run provenance. Every pipeline stage leaves a manifest beside its outputs
// recording the exact bytes it read and wrote, so a downstream stage can tell
// whether the files it is about to build on still match the run that produced
// them — and refuse to continue when they don't.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crp/errors.hpp"

namespace crp {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kManifestSchema = 1;

// FNV-1a, 64-bit. Guards against accidental edits and out-of-order reruns,
// not adversaries; stable across platforms, no dependencies.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string digest_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string digest_bytes(std::string_view s) {
  return digest_hex(fnv1a64(s.data(), s.size()));
}

inline std::string digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  return digest_hex(h);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// What one stage read and wrote, keyed by file name relative to the run
// directory so a finished run can be moved wholesale.
struct RunManifest {
  std::string stage;
  std::string tool_version = kToolVersion;
  std::string config_digest;  // empty when the stage takes no config file
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  double elapsed_seconds = 0.0;
  std::vector<std::string> warnings;

  void add_input(const std::filesystem::path& dir, const std::string& name) {
    inputs[name] = digest_file((dir / name).string());
  }
  void add_output(const std::filesystem::path& dir, const std::string& name) {
    outputs[name] = digest_file((dir / name).string());
  }
};

inline std::string manifest_filename(const std::string& stage) {
  return "manifest_" + stage + ".json";
}

inline void save_manifest(const RunManifest& m, const std::filesystem::path& dir) {
  nlohmann::ordered_json j;
  j["schema_version"] = kManifestSchema;
  j["stage"] = m.stage;
  j["tool_version"] = m.tool_version;
  j["config_digest"] = m.config_digest;
  j["elapsed_seconds"] = m.elapsed_seconds;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["warnings"] = m.warnings;

  const std::string path = (dir / manifest_filename(m.stage)).string();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot open for write: " + tmp);
    out << j.dump(2) << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error(ErrorKind::MissingFile, "cannot rename " + tmp + " to " + path);
}

inline RunManifest load_manifest(const std::filesystem::path& dir, const std::string& stage) {
  const std::string path = (dir / manifest_filename(stage)).string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path);
  RunManifest m;
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("schema_version").get<int>() != kManifestSchema)
      throw Error(ErrorKind::SchemaViolation,
                  path + ": unsupported manifest schema_version " +
                      j.at("schema_version").dump());
    m.stage = j.at("stage").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.elapsed_seconds = j.at("elapsed_seconds").get<double>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
  if (m.stage != stage)
    throw Error(ErrorKind::SchemaViolation,
                path + ": manifest names stage '" + m.stage + "', expected '" + stage + "'");
  return m;
}

// Re-hashes everything the stage recorded. An empty return means the run
// directory still matches the manifest byte for byte.
inline std::vector<std::string> stale_files(const RunManifest& m,
                                            const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  auto check = [&](const std::map<std::string, std::string>& files, const char* role) {
    for (const auto& [name, digest] : files) {
      const std::filesystem::path p = dir / name;
      std::error_code ec;
      if (!std::filesystem::exists(p, ec)) {
        problems.push_back(std::string(role) + " " + name + " of stage '" + m.stage +
                           "' is missing");
        continue;
      }
      if (digest_file(p.string()) != digest)
        problems.push_back(std::string(role) + " " + name + " changed since stage '" + m.stage +
                           "' ran");
    }
  };
  check(m.inputs, "input");
  check(m.outputs, "output");
  return problems;
}

// Loads the manifest an upstream stage left behind and insists the directory
// is still the one it described. `force` downgrades mismatches to warnings.
inline RunManifest require_stage(const std::string& stage, const std::filesystem::path& dir,
                                 bool force = false,
                                 std::vector<std::string>* warnings = nullptr) {
  RunManifest m;
  try {
    m = load_manifest(dir, stage);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::MissingFile)
      throw Error(ErrorKind::StaleInput, "stage '" + stage + "' has not run in " + dir.string() +
                                             "; run `crp " + stage + "` first");
    throw;
  }
  const std::vector<std::string> problems = stale_files(m, dir);
  if (problems.empty()) return m;
  std::string joined;
  for (const std::string& p : problems) {
    if (!joined.empty()) joined += "; ";
    joined += p;
  }
  if (!force)
    throw Error(ErrorKind::StaleInput, joined + " (rerun the stage, or pass --force)");
  if (warnings)
    for (const std::string& p : problems) warnings->push_back("forced past stale input: " + p);
  return m;
}

}  // namespace crp
