#include "lanedet/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <limits>

#include "lanedet/binary_io.hpp"
#include "lanedet/errors.hpp"

namespace lanedet {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params) {
    ByteWriter w;
    w.bytes("LNCK");
    w.u32(kCheckpointVersion);
    for (const auto& p : params.items()) {
        if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("parameter name too long");
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.bytes(p.name);
        w.u8(static_cast<std::uint8_t>(p.value.rank()));
        for (auto extent : p.value.shape()) w.u32(static_cast<std::uint32_t>(extent));
        for (double v : p.value.data()) w.f64(v);
    }
    return w.take();
}

ParameterSet decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (r.bytes(4, "magic") != "LNCK") throw FormatError("bad checkpoint magic", 0);
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    ParameterSet params;
    while (!r.at_end()) {
        const std::size_t record_start = r.offset();
        const auto name_len = r.u16("name length");
        std::string name = r.bytes(name_len, "parameter name");
        const auto rank = r.u8("rank");
        Shape shape;
        for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(r.u32("extent"));
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.f64("payload");
        if (params.contains(name)) throw FormatError("duplicate parameter record '" + name + "'", record_start);
        params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return params;
}

void save_checkpoint(const std::string& path, const ParameterSet& params) {
    write_file_bytes(path, encode_checkpoint(params));
}

ParameterSet load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

void assign_parameters(ParameterSet& target, const ParameterSet& source) {
    for (auto& p : target.items()) {
        if (!source.contains(p.name)) throw FormatError("checkpoint lacks parameter '" + p.name + "'", 0);
        const Tensor& src = source.get(p.name);
        if (src.shape() != p.value.shape()) {
            throw DimensionError("checkpoint parameter '" + p.name + "' has shape " + shape_to_string(src.shape()) +
                                 ", model expects " + shape_to_string(p.value.shape()));
        }
        auto dst = p.value.mutable_data();
        std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
}

}  // namespace lanedet
