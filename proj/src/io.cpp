#include "psfv/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace psfv {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is)
{
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("unexpected end of file");
    return v;
}

void expect_magic(std::istream& is, const char* magic)
{
    char buf[4];
    if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
        throw IoError(std::string("bad magic, expected ") + magic);
    }
}

} // namespace

void write_feature_tensor(std::ostream& os, const FeatureTensor& t)
{
    os.write("PSFT", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.channels));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.height));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.width));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.variant));
    os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

FeatureTensor read_feature_tensor(std::istream& is)
{
    expect_magic(is, "PSFT");
    const auto version = get<std::uint32_t>(is);
    if (version != 1) throw IoError("unsupported PSFT version " + std::to_string(version));
    const auto c = get<std::uint32_t>(is);
    const auto h = get<std::uint32_t>(is);
    const auto w = get<std::uint32_t>(is);
    const auto variant = get<std::uint8_t>(is);
    if (variant > 2) throw IoError("unknown PSFT variant code");
    if (c == 0 || h == 0 || w == 0 || std::uint64_t(c) * h * w > (1ull << 31)) throw IoError("implausible PSFT extents");
    FeatureTensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w), static_cast<FeatureVariant>(variant));
    if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)))) {
        throw IoError("truncated PSFT payload");
    }
    return t;
}

void save_feature_tensor(const std::filesystem::path& path, const FeatureTensor& t)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    write_feature_tensor(os, t);
    if (!os) throw IoError(path.string() + ": write failed");
}

FeatureTensor load_feature_tensor(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path.string() + ": cannot open");
    try {
        return read_feature_tensor(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt)
{
    os.write("SVMD", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, value] : ckpt.params) {
        put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(value.rank()));
        for (auto e : value.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        os.write(reinterpret_cast<const char*>(value.data().data()),
                 static_cast<std::streamsize>(value.size() * sizeof(float)));
    }
    const auto text = to_key_value_text(ckpt.config);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

Checkpoint read_checkpoint(std::istream& is)
{
    expect_magic(is, "SVMD");
    const auto version = get<std::uint32_t>(is);
    if (version != 1) throw IoError("unsupported SVMD version " + std::to_string(version));
    const auto count = get<std::uint32_t>(is);
    Checkpoint c;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint16_t>(is);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw IoError("truncated parameter name");
        const auto rank = get<std::uint8_t>(is);
        nn::Shape shape;
        for (int r = 0; r < rank; ++r) shape.push_back(get<std::uint32_t>(is));
        nn::Tensor<float> value(shape);
        if (!is.read(reinterpret_cast<char*>(value.data().data()),
                     static_cast<std::streamsize>(value.size() * sizeof(float)))) {
            throw IoError("truncated values for parameter " + name);
        }
        c.params.emplace_back(std::move(name), std::move(value));
    }
    const auto text_len = get<std::uint32_t>(is);
    std::string text(text_len, '\0');
    if (!is.read(text.data(), text_len)) throw IoError("truncated config block");
    c.config = parse_key_value_text(text);
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    write_checkpoint(os, ckpt);
    if (!os) throw IoError(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path.string() + ": cannot open");
    try {
        return read_checkpoint(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::string format_pgm(const FeatureTensor& t, int channel)
{
    if (channel < 0 || channel >= t.channels) throw std::out_of_range("channel " + std::to_string(channel) + " out of range");
    const auto ch = t.channel(channel);
    const float peak = ch.abs().maxCoeff();
    std::ostringstream os;
    os << "P2\n" << t.width << ' ' << t.height << "\n255\n";
    for (int r = 0; r < t.height; ++r) {
        for (int c = 0; c < t.width; ++c) {
            const float v = ch(r, c);
            int g = 0;
            if (v != 0.0f) g = 1 + static_cast<int>(std::lround(254.0 * std::abs(v) / peak));
            os << (c ? " " : "") << std::min(g, 255);
        }
        os << '\n';
    }
    return os.str();
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    os << content;
    if (!os) throw IoError(path.string() + ": write failed");
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace psfv
