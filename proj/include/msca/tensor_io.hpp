#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msca/tensor.hpp"

namespace msca {

// Raw tensor file:
//   "TNSR" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim | u8 pad=0 |
//   ndim x u32 LE dims | row-major LE payload

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline constexpr std::uint8_t kTensorFormatVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::F64);

/// Parses one tensor at the start of `bytes`. `base_offset` is added to the byte
/// offsets reported in FormatError. Sets `consumed` to the encoded length.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::uint64_t base_offset = 0,
                     std::size_t* consumed = nullptr);

void save_tensor(const std::string& path, const Tensor& t, DType dtype = DType::F64);
Tensor load_tensor(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace msca
