#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spontts/corpus.hpp"

namespace spontts::embedding {

constexpr int kDim = 512;

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  // Exactly kDim values; throws RuntimeFailure on service failure.
  virtual std::vector<float> embed_text(const std::string& text) = 0;
};

// Deterministic offline provider. The value for (seed, text) is defined as:
// draw 512 floats from mt19937_64 keyed by fnv1a64("hash-<seed>\0<text>"),
// each float(2u - 1) with u = (g() >> 11) * 2^-53. Tests reproduce this
// definition independently.
class HashProvider : public Provider {
 public:
  explicit HashProvider(std::uint64_t seed) : seed_(seed) {}
  std::string id() const override { return "hash-" + std::to_string(seed_); }
  std::vector<float> embed_text(const std::string& text) override;

 private:
  std::uint64_t seed_;
};

// Client for an external sentence-embedding service.
// POST <endpoint> with {"text": ...}; expects {"embedding": [512 floats]}.
struct HttpProviderConfig {
  std::string host;    // e.g. "127.0.0.1"
  int port = 8080;
  std::string path = "/embed";
  double timeout_s = 5.0;
  int retries = 3;
};

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {}
  std::string id() const override;
  std::vector<float> embed_text(const std::string& text) override;

 private:
  HttpProviderConfig cfg_;
};

// Wraps a provider with the null convention and an optional content-addressed
// on-disk cache (little-endian f32 x 512, file named by
// hex(fnv1a64(provider_id + '\0' + text))). Writes are atomic so a single
// writer can coexist with concurrent readers.
class Service {
 public:
  explicit Service(std::shared_ptr<Provider> provider,
                   std::optional<std::filesystem::path> cache_dir = {});

  // Null utterance embeds to the zero vector.
  Eigen::VectorXd embed(const corpus::Utterance* u);
  Eigen::VectorXd embed_text(const std::string& text);

  const std::string& provider_id() const { return provider_id_; }

 private:
  std::shared_ptr<Provider> provider_;
  std::string provider_id_;
  std::optional<std::filesystem::path> cache_dir_;
  std::map<std::string, std::vector<float>> memory_;
};

// Utterance text used for embedding: characters joined in order.
std::string utterance_text(const corpus::Utterance& u);

}  // namespace spontts::embedding
