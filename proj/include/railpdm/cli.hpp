#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "railpdm/errors.hpp"

/// Operator command line: simulate, compress, ingest, label, analyze, train,
/// predict, verify-ledger, serve, report, sync.
///
/// Exit codes: 0 success, 1 validation/verification failure, 2 usage error,
/// 3 I/O or transport failure. Failures print one JSON line on stderr:
///   {"error":"<kind>","message":"...","field":"..."}
namespace railpdm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

int exit_code_for(ErrorKind kind);

/// Written once by every command that produces artifacts.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::optional<std::uint64_t> seed;
  std::int64_t started_at = 0;
  std::vector<std::string> outputs;  // file paths or "ledger:<path>#seq=<from>..<to>"
};

nlohmann::json to_json(const RunManifest& m);

int run_cli(int argc, char** argv);

}  // namespace railpdm::cli
