#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "railpdm/crypto.hpp"
#include "railpdm/ledger.hpp"

namespace railpdm {

enum class Role { sensor, driver, mechanic, foreman, partner, admin };

inline constexpr Role kAllRoles[] = {Role::sensor,  Role::driver,  Role::mechanic,
                                     Role::foreman, Role::partner, Role::admin};

const char* to_string(Role role);
Role role_from_string(const std::string& s);

struct Principal {
  std::string id;
  Role role = Role::sensor;
  std::string token;
  Bytes mac_key;
};

/// Local principal registry. File format (JSON):
///   {"principals": [{"id": "...", "role": "driver", "token": "...",
///                    "mac_key": "<hex>"}, ...]}
class PrincipalRegistry {
 public:
  PrincipalRegistry() = default;
  explicit PrincipalRegistry(std::vector<Principal> principals);

  static PrincipalRegistry load(const std::string& path);
  void save(const std::string& path) const;

  const Principal* by_token(const std::string& token) const;
  const Principal* by_id(const std::string& id) const;
  const std::vector<Principal>& principals() const { return principals_; }

  ledger::Keyring keyring() const;

 private:
  std::vector<Principal> principals_;
  std::map<std::string, std::size_t> by_token_;
  std::map<std::string, std::size_t> by_id_;
};

}  // namespace railpdm
