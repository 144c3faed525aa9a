#pragma once

#include <complex>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "railpdm/access.hpp"
#include "railpdm/crypto.hpp"

namespace railpdm::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "railpdm-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Principal make_principal(const std::string& id, Role role) {
  const Digest k = sha256(as_bytes("key:" + id));
  return {id, role, "tok-" + id, Bytes(k.begin(), k.end())};
}

/// One principal per role plus the gateway service account.
inline PrincipalRegistry fixture_registry() {
  return PrincipalRegistry({make_principal("sensor1", Role::sensor),
                            make_principal("driver1", Role::driver),
                            make_principal("mech1", Role::mechanic),
                            make_principal("foreman1", Role::foreman),
                            make_principal("partner1", Role::partner),
                            make_principal("admin1", Role::admin),
                            make_principal("gateway", Role::admin)});
}

inline ledger::Keyring fixture_keyring() { return fixture_registry().keyring(); }

/// |sum_n x[n] e^{-2 pi i k n / N}| for k = 0..N/2, by direct summation.
inline Eigen::VectorXd naive_dft_magnitude(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  // Exact twiddles indexed by (k*t) mod N keep every angle small.
  std::vector<std::complex<double>> tw(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    tw[static_cast<std::size_t>(j)] = {std::cos(angle), std::sin(angle)};
  }
  Eigen::VectorXd out(n / 2 + 1);
  for (Eigen::Index k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) acc += x[t] * tw[static_cast<std::size_t>((k * t) % n)];
    out[k] = std::abs(acc);
  }
  return out;
}

}  // namespace railpdm::testing
