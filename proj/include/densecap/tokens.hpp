#pragma once

namespace densecap {

// Reserved vocabulary ids shared by the tokenizer, caption heads, and the
// vocabulary file format.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kReservedTokens = 4;

}  // namespace densecap
