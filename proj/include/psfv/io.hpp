#pragma once

#include "psfv/models.hpp"
#include "psfv/psf.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace psfv {

class IoError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Binary feature tensor: "PSFT", u32 version (1), u32 C, u32 H, u32 W,
/// u8 variant, then C*H*W little-endian float32 in channel/row/column order.
void write_feature_tensor(std::ostream& os, const FeatureTensor& t);
FeatureTensor read_feature_tensor(std::istream& is);
void save_feature_tensor(const std::filesystem::path& path, const FeatureTensor& t);
FeatureTensor load_feature_tensor(const std::filesystem::path& path);

struct Checkpoint
{
    std::vector<std::pair<std::string, nn::Tensor<float>>> params;
    std::map<std::string, std::string> config;
};

/// Model checkpoint: "SVMD", u32 version, u32 parameter count, then per
/// parameter u16 name length, name, u8 rank, rank x u32 extents, float32
/// values; then u32 length and an LF-separated key=value config block.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <class Scalar>
Checkpoint make_checkpoint(const Model<Scalar>& model, std::map<std::string, std::string> extra = {})
{
    Checkpoint c;
    for (const auto& p : model.parameters()) c.params.emplace_back(p.name, p.value.template cast<float>());
    c.config = model.config().to_map();
    for (auto& [k, v] : extra) c.config.emplace(k, v);
    return c;
}

/// Copies checkpoint values into a model built from the same config.
template <class Scalar>
void apply_checkpoint(Model<Scalar>& model, const Checkpoint& ckpt)
{
    auto& ps = model.parameters();
    if (ps.size() != ckpt.params.size()) throw IoError("checkpoint parameter count does not match model");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& [name, value] = ckpt.params[i];
        if (ps[i].name != name || ps[i].value.shape() != value.shape()) {
            throw IoError("checkpoint parameter " + name + " does not match model parameter " + ps[i].name);
        }
        ps[i].value = value.template cast<Scalar>();
    }
}

/// Plain (P2) greyscale image. Zero maps to 0; any nonzero value maps to
/// 1..255 by magnitude relative to the channel maximum.
std::string format_pgm(const FeatureTensor& t, int channel);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

/// 64-bit FNV-1a, used for corpus checksums in run manifests.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);

} // namespace psfv
