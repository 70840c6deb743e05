#include "psfv/ink.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace psfv {

namespace {

std::vector<std::string_view> split_lines(std::string_view content)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < content.size()) {
        auto end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        auto line = content.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        auto j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) fields.push_back(line.substr(i, j - i));
        i = j;
    }
    return fields;
}

bool parse_int(std::string_view s, std::int64_t& out)
{
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

bool is_blank(std::string_view line)
{
    return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; });
}

} // namespace

std::size_t SignatureInstance::point_count() const
{
    std::size_t n = 0;
    for (const auto& s : strokes) n += s.points.size();
    return n;
}

ParsedFile parse_svc_file(std::string_view content)
{
    auto lines = split_lines(content);
    while (!lines.empty() && is_blank(lines.back())) lines.pop_back();
    if (lines.empty()) throw InkError(InkErrorKind::malformed_header, "missing point count header");

    auto header = split_fields(lines[0]);
    std::int64_t declared = 0;
    if (header.size() != 1 || !parse_int(header[0], declared) || declared < 0) {
        throw InkError(InkErrorKind::malformed_header, "first line is not a point count");
    }

    ParsedFile out;
    out.points.reserve(static_cast<std::size_t>(declared));
    std::size_t columns = 0;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        auto fields = split_fields(lines[li]);
        if (fields.size() != 4 && fields.size() != 7) {
            throw InkError(InkErrorKind::column_count_mismatch,
                           "line " + std::to_string(li + 1) + ": expected 4 or 7 columns, got " +
                               std::to_string(fields.size()));
        }
        if (columns == 0) columns = fields.size();
        if (fields.size() != columns) {
            throw InkError(InkErrorKind::column_count_mismatch,
                           "line " + std::to_string(li + 1) + ": column count differs from first row");
        }
        std::array<std::int64_t, 7> v{};
        for (std::size_t k = 0; k < fields.size(); ++k) {
            if (!parse_int(fields[k], v[k])) {
                throw InkError(InkErrorKind::invalid_value,
                               "line " + std::to_string(li + 1) + ": not an integer: " + std::string(fields[k]));
            }
        }
        if (v[2] < 0) {
            throw InkError(InkErrorKind::invalid_value, "line " + std::to_string(li + 1) + ": negative timestamp");
        }
        if (v[3] != 0 && v[3] != 1) {
            throw InkError(InkErrorKind::invalid_value, "line " + std::to_string(li + 1) + ": button must be 0 or 1");
        }
        StrokePoint p;
        p.x = v[0];
        p.y = v[1];
        p.t = v[2];
        p.pen = v[3] == 1 ? PenState::down : PenState::up;
        if (columns == 7) p.aux = std::array<std::int64_t, 3>{v[4], v[5], v[6]};
        if (!out.points.empty() && p.t < out.points.back().t) {
            out.warnings.push_back("line " + std::to_string(li + 1) + ": timestamp decreases");
        }
        out.points.push_back(p);
    }

    if (static_cast<std::int64_t>(out.points.size()) != declared) {
        throw InkError(InkErrorKind::point_count_mismatch,
                       "header declares " + std::to_string(declared) + " points, found " +
                           std::to_string(out.points.size()));
    }
    return out;
}

std::string format_svc_file(const std::vector<StrokePoint>& points)
{
    std::ostringstream os;
    os << points.size() << '\n';
    for (const auto& p : points) {
        os << p.x << ' ' << p.y << ' ' << p.t << ' ' << (p.pen == PenState::down ? 1 : 0);
        if (p.aux) os << ' ' << (*p.aux)[0] << ' ' << (*p.aux)[1] << ' ' << (*p.aux)[2];
        os << '\n';
    }
    return os.str();
}

std::vector<Stroke> segment_strokes(const std::vector<StrokePoint>& points)
{
    if (points.empty()) throw InkError(InkErrorKind::empty_input, "no points to segment");
    std::vector<Stroke> strokes;
    Stroke current;
    for (const auto& p : points) {
        current.points.push_back(p);
        if (p.pen == PenState::up) {
            strokes.push_back(std::move(current));
            current = Stroke{};
        }
    }
    if (!current.points.empty()) strokes.push_back(std::move(current));
    return strokes;
}

Label label_for_sample(int sample_index)
{
    return sample_index <= 20 ? Label::genuine : Label::forgery;
}

std::optional<SvcName> parse_svc_name(std::string_view name)
{
    auto upper = [](char c) { return static_cast<char>(c >= 'a' && c <= 'z' ? c - 'a' + 'A' : c); };
    std::string s(name.size(), ' ');
    std::transform(name.begin(), name.end(), s.begin(), upper);

    if (s.size() < 8 || s.front() != 'U' || !s.ends_with(".TXT")) return std::nullopt;
    auto spos = s.find('S', 1);
    if (spos == std::string::npos) return std::nullopt;
    std::string_view sv(s);
    auto writer_part = sv.substr(1, spos - 1);
    auto sample_part = sv.substr(spos + 1, sv.size() - 4 - spos - 1);
    std::int64_t w = 0, k = 0;
    if (writer_part.empty() || sample_part.empty()) return std::nullopt;
    if (!std::all_of(writer_part.begin(), writer_part.end(), ::isdigit)) return std::nullopt;
    if (!std::all_of(sample_part.begin(), sample_part.end(), ::isdigit)) return std::nullopt;
    if (!parse_int(writer_part, w) || !parse_int(sample_part, k)) return std::nullopt;
    if (w < 1 || w > 40 || k < 1 || k > 40) return std::nullopt;
    return SvcName{static_cast<int>(w), static_cast<int>(k)};
}

SignatureInstance make_instance(const std::vector<StrokePoint>& points, int writer, int sample)
{
    SignatureInstance inst;
    inst.strokes = segment_strokes(points);
    inst.writer_id = writer;
    inst.sample_index = sample;
    inst.label = sample > 0 ? label_for_sample(sample) : Label::genuine;
    return inst;
}

namespace {

std::string read_file(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InkError(InkErrorKind::io_failure, file.string() + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw InkError(InkErrorKind::io_failure, file.string() + ": read failed");
    return ss.str();
}

} // namespace

SignatureInstance load_instance(const std::filesystem::path& file)
{
    auto content = read_file(file);
    auto name = parse_svc_name(file.filename().string());
    try {
        auto parsed = parse_svc_file(content);
        return make_instance(parsed.points, name ? name->writer : 0, name ? name->sample : 0);
    } catch (const InkError& e) {
        throw InkError(e.kind(), file.filename().string() + ": " + e.what());
    }
}

Corpus load_corpus(const std::filesystem::path& root, Task task, LoadOptions options)
{
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw InkError(InkErrorKind::io_failure, root.string() + ": not a directory");
    }

    std::map<std::pair<int, int>, fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        auto name = parse_svc_name(entry.path().filename().string());
        if (!name) continue;
        auto [it, inserted] = files.emplace(std::pair{name->writer, name->sample}, entry.path());
        if (!inserted) {
            throw InkError(InkErrorKind::duplicate_instance,
                           "duplicate instance U" + std::to_string(name->writer) + "S" +
                               std::to_string(name->sample) + ": " + it->second.filename().string() + " and " +
                               entry.path().filename().string());
        }
    }
    if (files.empty()) throw InkError(InkErrorKind::no_files_found, root.string() + ": no files found");

    Corpus corpus;
    corpus.source_task = task;
    for (const auto& [key, path] : files) {
        try {
            corpus.instances.push_back(load_instance(path));
        } catch (const InkError& e) {
            if (!options.permissive) throw;
            corpus.skipped.push_back(e.what());
        }
    }
    if (corpus.instances.empty()) throw InkError(InkErrorKind::no_files_found, root.string() + ": no readable files");
    return corpus;
}

} // namespace psfv
