#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "crossinit/backend.hpp"
#include "crossinit/inversion.hpp"

namespace fixture {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Five names from the default list.
crossinit::NameList five_names();
crossinit::NameList default_names();

/// Toy backend whose text encoder is the identity.
crossinit::Backend identity_backend();

/// Toy stack at dim 1024 with a generated 691-name vocabulary (`name<i>`
/// first, `surname<i>` last). Registered as "adapter:wide".
crossinit::Backend wide_backend();
crossinit::NameList wide_names();
void register_wide_adapter();

crossinit::ConceptEmbedding random_concept(std::mt19937_64& rng, int k, int dim,
                                           crossinit::InitStrategy s = crossinit::InitStrategy::cross);

/// Default toy setup: synthetic face, default names, default templates.
crossinit::InversionSetup toy_setup();

}  // namespace fixture
