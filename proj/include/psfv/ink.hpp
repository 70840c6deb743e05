#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace psfv {

enum class PenState : std::uint8_t { up = 0, down = 1 };
enum class Label : std::uint8_t { forgery = 0, genuine = 1 };
enum class Task : std::uint8_t { task1 = 1, task2 = 2 };

/// One digitizer sample. `aux` holds (azimuth, altitude, pressure) when the
/// source file has seven columns; nothing downstream reads it.
struct StrokePoint
{
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t t = 0;
    PenState pen = PenState::down;
    std::optional<std::array<std::int64_t, 3>> aux;

    friend bool operator==(const StrokePoint&, const StrokePoint&) = default;
};

struct Stroke
{
    std::vector<StrokePoint> points;
};

struct SignatureInstance
{
    std::vector<Stroke> strokes;
    int writer_id = 0;
    int sample_index = 0;
    Label label = Label::genuine;

    std::size_t point_count() const;
};

struct Corpus
{
    std::vector<SignatureInstance> instances;
    Task source_task = Task::task1;
    /// Files skipped in permissive mode, with the reason.
    std::vector<std::string> skipped;
};

enum class InkErrorKind {
    malformed_header,
    column_count_mismatch,
    point_count_mismatch,
    invalid_value,
    empty_input,
    no_files_found,
    duplicate_instance,
    io_failure,
};

class InkError : public std::runtime_error
{
public:
    InkError(InkErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    InkErrorKind kind() const noexcept { return kind_; }

private:
    InkErrorKind kind_;
};

struct ParsedFile
{
    std::vector<StrokePoint> points;
    /// Non-fatal findings, e.g. decreasing timestamps.
    std::vector<std::string> warnings;
};

/// Parses the SVC2004 text grammar: a point count followed by rows of 4
/// (X Y TIMESTAMP BUTTON) or 7 (plus AZIMUTH ALTITUDE PRESSURE) integers.
/// LF and CRLF line endings are both accepted.
ParsedFile parse_svc_file(std::string_view content);

/// Inverse of parse_svc_file. Emits LF line endings.
std::string format_svc_file(const std::vector<StrokePoint>& points);

/// Splits a point stream into strokes. A pen-up point closes the stroke it
/// belongs to; a trailing pen-down run closes at end of input.
std::vector<Stroke> segment_strokes(const std::vector<StrokePoint>& points);

/// SVC2004 convention: samples 1..20 genuine, 21..40 skilled forgeries.
Label label_for_sample(int sample_index);

struct SvcName
{
    int writer = 0;
    int sample = 0;
};

/// Matches `U<writer>S<sample>.TXT` (case-insensitive), writer and sample in 1..40.
std::optional<SvcName> parse_svc_name(std::string_view filename);

SignatureInstance make_instance(const std::vector<StrokePoint>& points, int writer, int sample);

struct LoadOptions
{
    bool permissive = false;
};

Corpus load_corpus(const std::filesystem::path& root, Task task, LoadOptions options = {});

/// Reads one SVC file from disk; writer/sample come from the filename when it
/// matches the naming scheme, otherwise both are 0 and the label is genuine.
SignatureInstance load_instance(const std::filesystem::path& file);

} // namespace psfv
