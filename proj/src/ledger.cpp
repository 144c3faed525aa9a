#include "railpdm/ledger.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>

#include "railpdm/binary_io.hpp"
#include "railpdm/errors.hpp"

namespace railpdm::ledger {

namespace {

constexpr std::string_view kLogMagic = "RSLOG1";
constexpr std::size_t kMaxFrame = 1u << 30;

void put_digest(ByteWriter& w, const Digest& d) { w.raw(d); }

Digest get_digest(ByteReader& r) {
  Digest d{};
  auto s = r.raw(d.size());
  std::copy(s.begin(), s.end(), d.begin());
  return d;
}

/// Holds an flock for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(int fd) : fd_(fd) {
    while (::flock(fd_, LOCK_EX) != 0) {
      if (errno != EINTR) fail(ErrorKind::io, std::string("flock: ") + std::strerror(errno));
    }
  }
  ~FileLock() { ::flock(fd_, LOCK_UN); }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_;
};

std::uint64_t file_size(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) fail(ErrorKind::io, std::string("fstat: ") + std::strerror(errno));
  return static_cast<std::uint64_t>(st.st_size);
}

Bytes pread_all(int fd, std::uint64_t offset, std::uint64_t len) {
  Bytes buf(len);
  std::uint64_t done = 0;
  while (done < len) {
    ssize_t n = ::pread(fd, buf.data() + done, len - done, static_cast<off_t>(offset + done));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail(ErrorKind::io, "short read from ledger log");
    done += static_cast<std::uint64_t>(n);
  }
  return buf;
}

void pwrite_all(int fd, std::span<const std::uint8_t> data, std::uint64_t offset) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done,
                         static_cast<off_t>(offset + done));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail(ErrorKind::io, std::string("ledger write failed: ") + std::strerror(errno));
    done += static_cast<std::size_t>(n);
  }
}

Bytes frame_of(const LedgerRecord& r) {
  Bytes body = encode_record(r);
  ByteWriter w;
  w.prefixed(body);
  return std::move(w).take();
}

}  // namespace

const char* to_string(CorruptReason r) {
  switch (r) {
    case CorruptReason::payload_hash: return "payload_hash";
    case CorruptReason::link: return "link";
    case CorruptReason::record_hash: return "record_hash";
    case CorruptReason::auth_tag: return "auth_tag";
  }
  return "record_hash";
}

std::int64_t now_micros() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Digest compute_record_hash(const LedgerRecord& r) {
  ByteWriter w;
  w.u64(r.seq);
  w.prefixed(r.key);
  w.u64(r.version);
  put_digest(w, r.payload_hash);
  put_digest(w, r.prev_hash);
  w.prefixed(r.author);
  w.i64(r.timestamp);
  return sha256(w.bytes());
}

Bytes encode_record(const LedgerRecord& r) {
  ByteWriter w;
  w.u64(r.seq);
  w.prefixed(r.key);
  w.u64(r.version);
  w.prefixed(r.payload);
  put_digest(w, r.payload_hash);
  put_digest(w, r.prev_hash);
  put_digest(w, r.record_hash);
  w.prefixed(r.author);
  put_digest(w, r.auth_tag);
  w.i64(r.timestamp);
  return std::move(w).take();
}

LedgerRecord decode_record(std::span<const std::uint8_t> body) {
  ByteReader rd(body);
  LedgerRecord r;
  r.seq = rd.u64();
  r.key = rd.prefixed_string();
  r.version = rd.u64();
  auto payload = rd.prefixed();
  r.payload.assign(payload.begin(), payload.end());
  r.payload_hash = get_digest(rd);
  r.prev_hash = get_digest(rd);
  r.record_hash = get_digest(rd);
  r.author = rd.prefixed_string();
  r.auth_tag = get_digest(rd);
  r.timestamp = rd.i64();
  if (!rd.done()) fail(ErrorKind::io, "trailing bytes in ledger frame");
  return r;
}

std::optional<CorruptReason> check_record(const LedgerRecord& r, std::uint64_t expected_seq,
                                          std::uint64_t expected_version,
                                          const Digest& expected_prev, const Keyring& keyring) {
  if (sha256(r.payload) != r.payload_hash) return CorruptReason::payload_hash;
  if (r.prev_hash != expected_prev) return CorruptReason::link;
  if (compute_record_hash(r) != r.record_hash || r.seq != expected_seq ||
      r.version != expected_version) {
    return CorruptReason::record_hash;
  }
  const Bytes* key = keyring.find(r.author);
  if (key == nullptr || !equal_tags(hmac_sha256(*key, r.record_hash), r.auth_tag)) {
    return CorruptReason::auth_tag;
  }
  return std::nullopt;
}

namespace {

/// Incremental verifier shared by in-memory and on-disk checks.
class ChainChecker {
 public:
  explicit ChainChecker(const Keyring& keyring) : keyring_(keyring) {}

  std::optional<CorruptReason> next(const LedgerRecord& r) {
    const std::uint64_t version = versions_[r.key] + 1;
    if (auto bad = check_record(r, seq_, version, prev_, keyring_)) return bad;
    versions_[r.key] = version;
    prev_ = r.record_hash;
    ++seq_;
    return std::nullopt;
  }

  std::uint64_t seq() const { return seq_; }

 private:
  const Keyring& keyring_;
  std::unordered_map<std::string, std::uint64_t> versions_;
  Digest prev_{};
  std::uint64_t seq_ = 0;
};

}  // namespace

Verification verify_records(std::span<const LedgerRecord> records, const Keyring& keyring) {
  ChainChecker checker(keyring);
  for (const auto& r : records) {
    if (auto bad = checker.next(r)) return {checker.seq(), Corruption{checker.seq(), *bad}};
  }
  return {checker.seq(), std::nullopt};
}

Verification verify_log_file(const std::string& path, const Keyring& keyring) {
  const Bytes data = read_file(path);
  ChainChecker checker(keyring);
  auto corrupt = [&](CorruptReason reason) {
    return Verification{checker.seq(), Corruption{checker.seq(), reason}};
  };
  if (data.size() < kLogMagic.size() ||
      !std::equal(kLogMagic.begin(), kLogMagic.end(), data.begin())) {
    return corrupt(CorruptReason::record_hash);
  }
  ByteReader rd{std::span<const std::uint8_t>(data).subspan(kLogMagic.size())};
  while (!rd.done()) {
    LedgerRecord rec;
    try {
      auto body = rd.prefixed();
      rec = decode_record(body);
    } catch (const Error&) {
      return corrupt(CorruptReason::record_hash);
    }
    if (auto bad = checker.next(rec)) return corrupt(*bad);
  }
  return {checker.seq(), std::nullopt};
}

// ---------------------------------------------------------------------------
// JSON wire forms

nlohmann::json to_json(const LedgerRecord& r) {
  return {{"seq", r.seq},
          {"key", r.key},
          {"version", r.version},
          {"payload", base64_encode(r.payload)},
          {"payload_hash", to_hex(r.payload_hash)},
          {"prev_hash", to_hex(r.prev_hash)},
          {"record_hash", to_hex(r.record_hash)},
          {"author", r.author},
          {"auth_tag", to_hex(r.auth_tag)},
          {"timestamp", r.timestamp}};
}

LedgerRecord record_from_json(const nlohmann::json& j) {
  try {
    LedgerRecord r;
    r.seq = j.at("seq").get<std::uint64_t>();
    r.key = j.at("key").get<std::string>();
    r.version = j.at("version").get<std::uint64_t>();
    r.payload = base64_decode(j.at("payload").get<std::string>());
    r.payload_hash = digest_from_hex(j.at("payload_hash").get<std::string>());
    r.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
    r.record_hash = digest_from_hex(j.at("record_hash").get<std::string>());
    r.author = j.at("author").get<std::string>();
    r.auth_tag = digest_from_hex(j.at("auth_tag").get<std::string>());
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::transport, std::string("malformed record JSON: ") + e.what());
  }
}

nlohmann::json to_json(const ChainHead& h) {
  return {{"length", h.length}, {"head_hash", to_hex(h.head_hash)}};
}

ChainHead head_from_json(const nlohmann::json& j) {
  try {
    return {j.at("length").get<std::uint64_t>(), digest_from_hex(j.at("head_hash").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::transport, std::string("malformed chain head JSON: ") + e.what());
  }
}

nlohmann::json to_json(const FrameRef& ref) { return {{"key", ref.key}, {"version", ref.version}}; }

FrameRef ref_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("key") || !j["key"].is_string() || !j.contains("version") ||
      !j["version"].is_number_unsigned()) {
    throw ValidationError("evidence", "frame reference needs string key and unsigned version");
  }
  return {j["key"].get<std::string>(), j["version"].get<std::uint64_t>()};
}

// ---------------------------------------------------------------------------
// Store

Ledger::Ledger(std::string path, Keyring keyring, Options options)
    : path_(std::move(path)), keyring_(std::move(keyring)), options_(std::move(options)) {
  if (!options_.clock) options_.clock = now_micros;
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorKind::io, "cannot open ledger " + path_ + ": " + std::strerror(errno));
  try {
    FileLock lock(fd_);
    if (file_size(fd_) == 0) {
      pwrite_all(fd_, as_bytes(kLogMagic), 0);
      if (options_.durable) ::fdatasync(fd_);
    } else {
      Bytes magic = file_size(fd_) >= kLogMagic.size() ? pread_all(fd_, 0, kLogMagic.size()) : Bytes{};
      if (magic.size() != kLogMagic.size() ||
          !std::equal(kLogMagic.begin(), kLogMagic.end(), magic.begin())) {
        fail(ErrorKind::io, path_ + " is not a ledger log");
      }
    }
    file_offset_ = kLogMagic.size();
    load_tail_locked();
  } catch (...) {
    ::close(fd_);
    throw;
  }
}

Ledger::~Ledger() {
  if (fd_ >= 0) ::close(fd_);
}

void Ledger::load_tail_locked() {
  const std::uint64_t size = file_size(fd_);
  if (size <= file_offset_) return;
  const Bytes tail = pread_all(fd_, file_offset_, size - file_offset_);
  std::size_t pos = 0;
  std::vector<LedgerRecord> fresh;
  while (pos < tail.size()) {
    if (tail.size() - pos < 4) break;
    ByteReader len_reader{std::span<const std::uint8_t>(tail).subspan(pos, 4)};
    const std::uint32_t len = len_reader.u32();
    if (len > kMaxFrame || tail.size() - pos - 4 < len) break;
    try {
      fresh.push_back(decode_record(std::span(tail).subspan(pos + 4, len)));
    } catch (const Error&) {
      fail(ErrorKind::io, "ledger " + path_ + " has an undecodable frame at seq " +
                              std::to_string(index_.records.size() + fresh.size()));
    }
    pos += 4 + len;
  }
  if (pos < tail.size()) {
    if (!options_.recover_torn_tail) {
      fail(ErrorKind::io, "ledger " + path_ + " ends with an incomplete frame");
    }
    // Keep the dropped bytes: a corrupted length prefix looks like a torn
    // tail, and discarding it silently would erase tamper evidence.
    write_file(path_ + ".torn-" + std::to_string(file_offset_ + pos),
               std::span<const std::uint8_t>(tail).subspan(pos));
    if (::ftruncate(fd_, static_cast<off_t>(file_offset_ + pos)) != 0) {
      fail(ErrorKind::io, "cannot drop torn ledger tail");
    }
  }
  std::unique_lock guard(index_mu_);
  for (auto& r : fresh) index_locked(std::move(r));
  file_offset_ += pos;
}

void Ledger::index_locked(LedgerRecord rec) {
  index_.by_key[rec.key].push_back(rec.seq);
  index_.records.push_back(std::move(rec));
}

void Ledger::write_frames_locked(const std::vector<LedgerRecord>& recs) {
  Bytes buf;
  for (const auto& r : recs) {
    Bytes f = frame_of(r);
    buf.insert(buf.end(), f.begin(), f.end());
  }
  try {
    pwrite_all(fd_, buf, file_offset_);
    if (options_.durable && ::fdatasync(fd_) != 0) {
      fail(ErrorKind::io, std::string("fdatasync: ") + std::strerror(errno));
    }
  } catch (...) {
    [[maybe_unused]] int rc = ::ftruncate(fd_, static_cast<off_t>(file_offset_));
    throw;
  }
  file_offset_ += buf.size();
  std::unique_lock guard(index_mu_);
  for (const auto& r : recs) index_locked(r);
}

void Ledger::check_author(const std::string& author, std::span<const std::uint8_t> key) const {
  const Bytes* known = keyring_.find(author);
  if (known == nullptr) fail(ErrorKind::auth, "unknown author '" + author + "'");
  if (known->size() != key.size() || !std::equal(known->begin(), known->end(), key.begin())) {
    fail(ErrorKind::auth, "key mismatch for author '" + author + "'");
  }
}

LedgerRecord Ledger::seal(std::string_view key, Bytes payload, const std::string& author,
                          std::span<const std::uint8_t> author_key) const {
  LedgerRecord r;
  {
    std::shared_lock guard(index_mu_);
    r.seq = index_.records.size();
    auto it = index_.by_key.find(std::string(key));
    r.version = (it == index_.by_key.end() ? 0 : it->second.size()) + 1;
    if (!index_.records.empty()) r.prev_hash = index_.records.back().record_hash;
  }
  r.key = std::string(key);
  r.payload = std::move(payload);
  r.payload_hash = sha256(r.payload);
  r.author = author;
  r.timestamp = options_.clock();
  r.record_hash = compute_record_hash(r);
  r.auth_tag = hmac_sha256(author_key, r.record_hash);
  return r;
}

LedgerRecord Ledger::append(std::string_view key, std::span<const std::uint8_t> payload,
                            const std::string& author, std::span<const std::uint8_t> author_key) {
  Bytes copy(payload.begin(), payload.end());
  return append_built(key, author, author_key, [&](std::uint64_t) { return copy; });
}

LedgerRecord Ledger::append_built(std::string_view key, const std::string& author,
                                  std::span<const std::uint8_t> author_key,
                                  const std::function<Bytes(std::uint64_t)>& build) {
  if (key.empty()) fail(ErrorKind::parameter, "ledger key must be non-empty");
  check_author(author, author_key);
  std::lock_guard writer(writer_);
  FileLock lock(fd_);
  load_tail_locked();
  const std::uint64_t version = versions(key) + 1;
  LedgerRecord rec = seal(key, build(version), author, author_key);
  write_frames_locked({rec});
  return rec;
}

void Ledger::refresh() {
  std::lock_guard writer(writer_);
  FileLock lock(fd_);
  load_tail_locked();
}

std::optional<LedgerRecord> Ledger::get_latest(std::string_view key) const {
  std::shared_lock guard(index_mu_);
  auto it = index_.by_key.find(std::string(key));
  if (it == index_.by_key.end()) return std::nullopt;
  return index_.records[it->second.back()];
}

std::optional<LedgerRecord> Ledger::get_version(std::string_view key, std::uint64_t version) const {
  std::shared_lock guard(index_mu_);
  auto it = index_.by_key.find(std::string(key));
  if (it == index_.by_key.end() || version == 0 || version > it->second.size()) return std::nullopt;
  return index_.records[it->second[version - 1]];
}

std::vector<LedgerRecord> Ledger::history(std::string_view key) const {
  std::shared_lock guard(index_mu_);
  std::vector<LedgerRecord> out;
  auto it = index_.by_key.find(std::string(key));
  if (it == index_.by_key.end()) return out;
  out.reserve(it->second.size());
  for (auto seq : it->second) out.push_back(index_.records[seq]);
  return out;
}

std::optional<LedgerRecord> Ledger::record(std::uint64_t seq) const {
  std::shared_lock guard(index_mu_);
  if (seq >= index_.records.size()) return std::nullopt;
  return index_.records[seq];
}

std::vector<LedgerRecord> Ledger::records(std::uint64_t from, std::uint64_t to) const {
  std::shared_lock guard(index_mu_);
  to = std::min<std::uint64_t>(to, index_.records.size());
  if (from >= to) return {};
  return {index_.records.begin() + static_cast<std::ptrdiff_t>(from),
          index_.records.begin() + static_cast<std::ptrdiff_t>(to)};
}

std::vector<std::string> Ledger::keys(std::string_view prefix) const {
  std::shared_lock guard(index_mu_);
  std::vector<std::string> out;
  for (const auto& [k, _] : index_.by_key) {
    if (k.starts_with(prefix)) out.push_back(k);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t Ledger::count(std::string_view prefix) const {
  std::shared_lock guard(index_mu_);
  std::uint64_t n = 0;
  for (const auto& [k, seqs] : index_.by_key) {
    if (k.starts_with(prefix)) n += seqs.size();
  }
  return n;
}

std::uint64_t Ledger::versions(std::string_view key) const {
  std::shared_lock guard(index_mu_);
  auto it = index_.by_key.find(std::string(key));
  return it == index_.by_key.end() ? 0 : it->second.size();
}

ChainHead Ledger::head() const {
  std::shared_lock guard(index_mu_);
  ChainHead h;
  h.length = index_.records.size();
  if (!index_.records.empty()) h.head_hash = index_.records.back().record_hash;
  return h;
}

Verification Ledger::verify_chain() const { return verify_log_file(path_, keyring_); }

SyncResult Ledger::sync_from_peer(const ChainHead& peer_head, const FetchFn& fetch) {
  auto fetch_checked = [&](std::uint64_t from, std::uint64_t to) {
    std::vector<LedgerRecord> got;
    try {
      got = fetch(from, to);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::transport) throw;
      fail(ErrorKind::transport, e.what());
    } catch (const std::exception& e) {
      fail(ErrorKind::transport, e.what());
    }
    if (got.size() != to - from) {
      fail(ErrorKind::transport, "peer returned " + std::to_string(got.size()) + " records for [" +
                                     std::to_string(from) + ", " + std::to_string(to) + ")");
    }
    return got;
  };
  const std::uint64_t batch = std::max<std::uint64_t>(1, options_.sync_batch);

  std::lock_guard writer(writer_);
  FileLock lock(fd_);
  load_tail_locked();
  const ChainHead local = head();

  // First seq where the peer's record hashes disagree with ours.
  auto first_mismatch = [&](std::uint64_t upto) -> std::uint64_t {
    for (std::uint64_t from = 0; from < upto; from += batch) {
      const std::uint64_t to = std::min(upto, from + batch);
      auto peer = fetch_checked(from, to);
      for (std::uint64_t i = from; i < to; ++i) {
        if (peer[i - from].record_hash != index_.records[i].record_hash) return i;
      }
    }
    return upto;
  };

  if (peer_head.length <= local.length) {
    if (peer_head.length == 0) return {};
    std::shared_lock guard(index_mu_);
    if (index_.records[peer_head.length - 1].record_hash == peer_head.head_hash) return {};
    guard.unlock();
    return {0, first_mismatch(peer_head.length)};
  }
  if (local.length > 0) {
    auto tip = fetch_checked(local.length - 1, local.length);
    if (tip[0].record_hash != local.head_hash) return {0, first_mismatch(local.length)};
  }

  std::unordered_map<std::string, std::uint64_t> staged_versions;
  auto version_for = [&](const std::string& key) {
    auto it = staged_versions.find(key);
    if (it != staged_versions.end()) return it->second;
    return versions(key);
  };

  std::vector<LedgerRecord> staged;
  Digest prev = local.head_hash;
  for (std::uint64_t from = local.length; from < peer_head.length; from += batch) {
    const std::uint64_t to = std::min(peer_head.length, from + batch);
    for (auto& r : fetch_checked(from, to)) {
      const std::uint64_t seq = local.length + staged.size();
      const std::uint64_t version = version_for(r.key) + 1;
      if (check_record(r, seq, version, prev, keyring_)) return {0, seq};
      staged_versions[r.key] = version;
      prev = r.record_hash;
      staged.push_back(std::move(r));
    }
  }
  if (prev != peer_head.head_hash) return {0, peer_head.length - 1};
  write_frames_locked(staged);
  return {staged.size(), std::nullopt};
}

}  // namespace railpdm::ledger
