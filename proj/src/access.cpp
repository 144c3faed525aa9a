#include "railpdm/access.hpp"

#include <fstream>

#include <json.hpp>

#include "railpdm/binary_io.hpp"
#include "railpdm/errors.hpp"

namespace railpdm {

const char* to_string(Role role) {
  switch (role) {
    case Role::sensor: return "sensor";
    case Role::driver: return "driver";
    case Role::mechanic: return "mechanic";
    case Role::foreman: return "foreman";
    case Role::partner: return "partner";
    case Role::admin: return "admin";
  }
  return "sensor";
}

Role role_from_string(const std::string& s) {
  for (Role r : kAllRoles) {
    if (s == to_string(r)) return r;
  }
  throw ValidationError("role", "unknown role '" + s + "'");
}

PrincipalRegistry::PrincipalRegistry(std::vector<Principal> principals)
    : principals_(std::move(principals)) {
  for (std::size_t i = 0; i < principals_.size(); ++i) {
    const auto& p = principals_[i];
    if (p.id.empty()) throw ValidationError("id", "principal id must be non-empty");
    if (p.token.empty()) throw ValidationError("token", "principal '" + p.id + "' has no token");
    if (!by_id_.emplace(p.id, i).second) throw ValidationError("id", "duplicate principal " + p.id);
    if (!by_token_.emplace(p.token, i).second) {
      throw ValidationError("token", "token of '" + p.id + "' is not unique");
    }
  }
}

PrincipalRegistry PrincipalRegistry::load(const std::string& path) {
  const Bytes raw = read_file(path);
  nlohmann::json j = nlohmann::json::parse(raw.begin(), raw.end(), nullptr, false);
  if (j.is_discarded() || !j.contains("principals") || !j["principals"].is_array()) {
    throw ValidationError("principals", "registry " + path + " is malformed");
  }
  std::vector<Principal> out;
  for (const auto& e : j["principals"]) {
    Principal p;
    p.id = e.value("id", "");
    p.role = role_from_string(e.value("role", ""));
    p.token = e.value("token", "");
    p.mac_key = from_hex(e.value("mac_key", ""));
    if (p.mac_key.empty()) throw ValidationError("mac_key", "principal '" + p.id + "' has no mac_key");
    out.push_back(std::move(p));
  }
  return PrincipalRegistry(std::move(out));
}

void PrincipalRegistry::save(const std::string& path) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : principals_) {
    arr.push_back({{"id", p.id}, {"role", to_string(p.role)}, {"token", p.token},
                   {"mac_key", to_hex(p.mac_key)}});
  }
  const std::string text = nlohmann::json{{"principals", arr}}.dump(2) + "\n";
  write_file(path, as_bytes(text));
}

const Principal* PrincipalRegistry::by_token(const std::string& token) const {
  auto it = by_token_.find(token);
  return it == by_token_.end() ? nullptr : &principals_[it->second];
}

const Principal* PrincipalRegistry::by_id(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &principals_[it->second];
}

ledger::Keyring PrincipalRegistry::keyring() const {
  ledger::Keyring k;
  for (const auto& p : principals_) k.add(p.id, p.mac_key);
  return k;
}

}  // namespace railpdm
