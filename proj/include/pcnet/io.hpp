#ifndef PCNET_IO_HPP
#define PCNET_IO_HPP

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "pcnet/decoding.hpp"
#include "pcnet/detection.hpp"
#include "pcnet/model.hpp"
#include "pcnet/toylm.hpp"

namespace pcnet {

inline constexpr const char* kCheckpointFormat = "pcnet-ckpt-v1";

/// Model plus the optional toy LM sidecar.
struct Checkpoint {
  PcNet model;
  std::optional<ToyLmSpec> toylm;
};

// Floats are stored as C99 hex-float strings, which round-trip every bit
// (including -inf weight logits).
std::string encode_double(double v);
double decode_double(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const GateDecision& d);
nlohmann::json to_json(const PlantedPrompt& p);

/// One prompt record per line.
void write_corpus_jsonl(std::ostream& os, const PlantedCorpus& corpus);

}  // namespace pcnet

#endif  // PCNET_IO_HPP
