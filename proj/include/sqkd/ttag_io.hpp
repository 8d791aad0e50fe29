#pragma once

#include "core.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace sqkd {

/// \brief A time-tag recording: clock parameters plus the event list.
struct tag_stream {
    clock_config clock;
    std::vector<time_tag> tags;
    /// Set by readers when some channel's timestamps are not non-decreasing.
    bool monotonicity_warning = false;
};

namespace detail {

inline constexpr std::array<unsigned char, 5> ttag_magic = {0x54, 0x54, 0x41,
                                                            0x47, 0x01};

inline void put_u64_le(unsigned char *out, std::uint64_t value) {
    for (int i = 0; i < 8; ++i)
        out[i] = static_cast<unsigned char>(value >> (8 * i));
}

inline auto get_u64_le(unsigned char const *in) -> std::uint64_t {
    std::uint64_t value = 0;
    for (int i = 0; i < 8; ++i)
        value |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    return value;
}

inline auto flag_nonmonotone(std::vector<time_tag> const &tags) -> bool {
    std::array<std::uint64_t, 4> last{};
    std::array<bool, 4> seen{};
    for (auto const &tag : tags) {
        const int c = static_cast<int>(tag.ch);
        if (seen[c] && tag.timestamp_ps < last[c])
            return true;
        seen[c] = true;
        last[c] = tag.timestamp_ps;
    }
    return false;
}

} // namespace detail

/// \brief Write a stream in the binary TTAG format.
inline void write_ttag(std::ostream &out, tag_stream const &stream) {
    std::array<unsigned char, 14> header{};
    std::memcpy(header.data(), detail::ttag_magic.data(), 5);
    detail::put_u64_le(header.data() + 5, stream.clock.period_ps);
    header[13] = static_cast<unsigned char>(channel_count);
    out.write(reinterpret_cast<char const *>(header.data()),
              static_cast<std::streamsize>(header.size()));
    std::vector<unsigned char> buffer;
    constexpr std::size_t chunk_records = 1 << 16;
    buffer.resize(9 * chunk_records);
    std::size_t filled = 0;
    for (auto const &tag : stream.tags) {
        unsigned char *rec = buffer.data() + 9 * filled;
        rec[0] = static_cast<unsigned char>(tag.ch);
        detail::put_u64_le(rec + 1, tag.timestamp_ps);
        if (++filled == chunk_records) {
            out.write(reinterpret_cast<char const *>(buffer.data()),
                      static_cast<std::streamsize>(9 * filled));
            filled = 0;
        }
    }
    if (filled > 0)
        out.write(reinterpret_cast<char const *>(buffer.data()),
                  static_cast<std::streamsize>(9 * filled));
    if (!out)
        throw std::runtime_error("failed writing TTAG stream");
}

/// \brief Read a stream in the binary TTAG format.
///
/// Throws std::runtime_error on bad magic/version, unsupported channel count,
/// out-of-range channel ids, or a truncated record. Non-monotone per-channel
/// timestamps only set tag_stream::monotonicity_warning.
inline auto read_ttag(std::istream &in) -> tag_stream {
    std::array<unsigned char, 14> header{};
    in.read(reinterpret_cast<char *>(header.data()),
            static_cast<std::streamsize>(header.size()));
    if (in.gcount() != static_cast<std::streamsize>(header.size()))
        throw std::runtime_error("truncated TTAG header");
    if (std::memcmp(header.data(), detail::ttag_magic.data(), 5) != 0)
        throw std::runtime_error("bad TTAG magic or version");
    tag_stream stream;
    stream.clock.period_ps = detail::get_u64_le(header.data() + 5);
    if (stream.clock.period_ps == 0)
        throw std::runtime_error("TTAG period must be positive");
    if (header[13] != channel_count)
        throw std::runtime_error("unsupported TTAG channel count");
    std::vector<unsigned char> buffer;
    constexpr std::size_t chunk_bytes = 9 * (1 << 16);
    buffer.resize(chunk_bytes);
    std::size_t carry = 0;
    while (in) {
        in.read(reinterpret_cast<char *>(buffer.data() + carry),
                static_cast<std::streamsize>(chunk_bytes - carry));
        const auto got = static_cast<std::size_t>(in.gcount()) + carry;
        const std::size_t whole = got / 9;
        for (std::size_t i = 0; i < whole; ++i) {
            unsigned char const *rec = buffer.data() + 9 * i;
            if (rec[0] >= channel_count)
                throw std::runtime_error("TTAG channel id out of range");
            stream.tags.push_back(time_tag{detail::get_u64_le(rec + 1),
                                           static_cast<channel>(rec[0])});
        }
        carry = got - 9 * whole;
        if (carry > 0)
            std::memmove(buffer.data(), buffer.data() + 9 * whole, carry);
        if (got == 0)
            break;
    }
    if (carry != 0)
        throw std::runtime_error("truncated TTAG record");
    stream.monotonicity_warning = detail::flag_nonmonotone(stream.tags);
    return stream;
}

/// \brief Write a stream as CSV: a period comment, the header line, one
/// record per line with the numeric channel id.
inline void write_timetag_csv(std::ostream &out, tag_stream const &stream) {
    out << "# period_ps=" << stream.clock.period_ps << '\n';
    out << "channel,timestamp_ps\n";
    for (auto const &tag : stream.tags)
        out << static_cast<int>(tag.ch) << ',' << tag.timestamp_ps << '\n';
    if (!out)
        throw std::runtime_error("failed writing CSV stream");
}

/// \brief Read a CSV stream written by write_timetag_csv.
///
/// Accepts numeric ids or H/V/D/A letters in the channel column; `#`
/// comments may carry a period_ps annotation, otherwise \p fallback_clock
/// applies.
inline auto read_timetag_csv(std::istream &in,
                             clock_config fallback_clock = clock_config{})
    -> tag_stream {
    tag_stream stream;
    stream.clock = fallback_clock;
    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        if (line.front() == '#') {
            const auto pos = line.find("period_ps=");
            if (pos != std::string::npos)
                stream.clock.period_ps =
                    std::stoull(line.substr(pos + std::strlen("period_ps=")));
            continue;
        }
        if (!header_seen) {
            if (line != "channel,timestamp_ps")
                throw std::runtime_error("CSV header must be channel,timestamp_ps");
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("malformed CSV record at line " +
                                     std::to_string(line_no));
        time_tag tag;
        try {
            tag.ch = parse_channel(
                std::string_view(line).substr(0, comma));
            tag.timestamp_ps = std::stoull(line.substr(comma + 1));
        } catch (std::exception const &) {
            throw std::runtime_error("malformed CSV record at line " +
                                     std::to_string(line_no));
        }
        stream.tags.push_back(tag);
    }
    if (!header_seen && !stream.tags.empty())
        throw std::runtime_error("CSV stream missing header");
    stream.monotonicity_warning = detail::flag_nonmonotone(stream.tags);
    return stream;
}

/// \brief Read a time-tag file, auto-detecting binary TTAG vs CSV content.
inline auto read_timetag_file(std::filesystem::path const &path) -> tag_stream {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::array<char, 5> probe{};
    in.read(probe.data(), probe.size());
    const auto got = in.gcount();
    in.clear();
    in.seekg(0);
    if (got == 5 &&
        std::memcmp(probe.data(), detail::ttag_magic.data(), 5) == 0)
        return read_ttag(in);
    return read_timetag_csv(in);
}

/// \brief Write a time-tag file; a .csv extension selects CSV, anything else
/// the binary TTAG format.
inline void write_timetag_file(std::filesystem::path const &path,
                               tag_stream const &stream) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() +
                                 " for writing");
    if (path.extension() == ".csv")
        write_timetag_csv(out, stream);
    else
        write_ttag(out, stream);
}

} // namespace sqkd
