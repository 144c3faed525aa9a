#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "railpdm/crypto.hpp"

/// Append-only, hash-chained, versioned record store.
///
/// Every record carries the digest of its predecessor and an HMAC by its
/// author, so any retroactive edit to the persisted log is detectable by
/// verify_chain(). Enrichment never edits a record; it appends a new version
/// under the same or a derived key.
namespace railpdm::ledger {

struct LedgerRecord {
  std::uint64_t seq = 0;
  std::string key;
  std::uint64_t version = 0;
  Bytes payload;
  Digest payload_hash{};
  Digest prev_hash{};
  Digest record_hash{};
  std::string author;
  Digest auth_tag{};
  std::int64_t timestamp = 0;

  bool operator==(const LedgerRecord&) const = default;

  std::string payload_text() const { return {payload.begin(), payload.end()}; }
};

struct ChainHead {
  std::uint64_t length = 0;
  Digest head_hash{};

  bool operator==(const ChainHead&) const = default;
};

struct FrameRef {
  std::string key;
  std::uint64_t version = 0;

  auto operator<=>(const FrameRef&) const = default;
};

enum class CorruptReason { payload_hash, link, record_hash, auth_tag };
const char* to_string(CorruptReason r);

struct Corruption {
  std::uint64_t first_bad_seq = 0;
  CorruptReason reason = CorruptReason::record_hash;
};

struct Verification {
  std::uint64_t length = 0;  // records checked (good prefix length when corrupt)
  std::optional<Corruption> corruption;

  bool ok() const { return !corruption.has_value(); }
};

/// Principal id -> MAC key.
class Keyring {
 public:
  void add(std::string principal, Bytes key) { keys_[std::move(principal)] = std::move(key); }
  const Bytes* find(const std::string& principal) const {
    auto it = keys_.find(principal);
    return it == keys_.end() ? nullptr : &it->second;
  }
  bool empty() const { return keys_.empty(); }

 private:
  std::map<std::string, Bytes> keys_;
};

// Canonical encodings.

/// Digest input: seq, key, version, payload_hash, prev_hash, author, timestamp.
Digest compute_record_hash(const LedgerRecord& r);
/// All fields in declaration order (the body of one log frame).
Bytes encode_record(const LedgerRecord& r);
LedgerRecord decode_record(std::span<const std::uint8_t> body);

/// Checks one record against its predecessor's hash and expected position.
std::optional<CorruptReason> check_record(const LedgerRecord& r, std::uint64_t expected_seq,
                                          std::uint64_t expected_version,
                                          const Digest& expected_prev, const Keyring& keyring);

Verification verify_records(std::span<const LedgerRecord> records, const Keyring& keyring);
/// Verifies a persisted log file independently of any open store. Frames
/// that cannot be decoded are reported as record_hash failures.
Verification verify_log_file(const std::string& path, const Keyring& keyring);

nlohmann::json to_json(const LedgerRecord& r);
LedgerRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ChainHead& h);
ChainHead head_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FrameRef& ref);
FrameRef ref_from_json(const nlohmann::json& j);

/// Records [from, to) of a peer chain.
using FetchFn = std::function<std::vector<LedgerRecord>(std::uint64_t from, std::uint64_t to)>;

struct SyncResult {
  std::uint64_t appended = 0;
  std::optional<std::uint64_t> diverged_at;

  bool ok() const { return !diverged_at.has_value(); }
};

struct Options {
  /// fdatasync after every append.
  bool durable = true;
  /// Drop an incomplete trailing frame left by a crash mid-append.
  bool recover_torn_tail = true;
  std::function<std::int64_t()> clock;
  std::uint64_t sync_batch = 256;
};

std::int64_t now_micros();

class Ledger {
 public:
  /// Opens (or creates) the log at `path` and rebuilds the index.
  Ledger(std::string path, Keyring keyring, Options options = {});
  ~Ledger();
  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  /// Throws ErrorKind::auth for an unknown author or a key that does not
  /// match the keyring, ErrorKind::io if the write fails (chain unchanged).
  LedgerRecord append(std::string_view key, std::span<const std::uint8_t> payload,
                      const std::string& author, std::span<const std::uint8_t> author_key);

  /// Like append, but the payload is produced under the writer lock from the
  /// version it will receive, so ids derived from it are unique.
  LedgerRecord append_built(std::string_view key, const std::string& author,
                            std::span<const std::uint8_t> author_key,
                            const std::function<Bytes(std::uint64_t version)>& build);

  std::optional<LedgerRecord> get_latest(std::string_view key) const;
  std::optional<LedgerRecord> get_version(std::string_view key, std::uint64_t version) const;
  std::vector<LedgerRecord> history(std::string_view key) const;
  std::optional<LedgerRecord> record(std::uint64_t seq) const;
  /// Records with seq in [from, min(to, length)).
  std::vector<LedgerRecord> records(std::uint64_t from, std::uint64_t to) const;

  /// Keys beginning with `prefix`, sorted.
  std::vector<std::string> keys(std::string_view prefix = {}) const;
  /// Number of records whose key begins with `prefix`.
  std::uint64_t count(std::string_view prefix) const;
  std::uint64_t versions(std::string_view key) const;

  ChainHead head() const;
  std::uint64_t size() const { return head().length; }
  const std::string& path() const { return path_; }
  const Keyring& keyring() const { return keyring_; }

  /// Re-reads and verifies the persisted log.
  Verification verify_chain() const;

  /// Pulls the suffix a peer has beyond the local chain. Nothing is appended
  /// unless every fetched record verifies and the peer extends local state.
  /// Fetch failures surface as ErrorKind::transport with local state intact.
  SyncResult sync_from_peer(const ChainHead& peer_head, const FetchFn& fetch);

  /// Picks up records appended to the file by another process.
  void refresh();

 private:
  struct Index {
    std::vector<LedgerRecord> records;
    std::unordered_map<std::string, std::vector<std::uint64_t>> by_key;
  };

  void load_tail_locked();
  void write_frames_locked(const std::vector<LedgerRecord>& recs);
  void index_locked(LedgerRecord rec);
  LedgerRecord seal(std::string_view key, Bytes payload, const std::string& author,
                    std::span<const std::uint8_t> author_key) const;
  void check_author(const std::string& author, std::span<const std::uint8_t> key) const;

  std::string path_;
  Keyring keyring_;
  Options options_;
  int fd_ = -1;
  std::uint64_t file_offset_ = 0;  // end of the last complete frame we indexed

  std::mutex writer_;
  mutable std::shared_mutex index_mu_;
  Index index_;
};

}  // namespace railpdm::ledger
