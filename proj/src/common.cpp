#include "graphocog/common.hpp"

#include <array>
#include <cmath>

namespace graphocog {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownGroup: return "UnknownGroup";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NonMonotoneTime: return "NonMonotoneTime";
    case ErrorCode::DegenerateTime: return "DegenerateTime";
    case ErrorCode::InvalidLength: return "InvalidLength";
    case ErrorCode::EmptySignal: return "EmptySignal";
    case ErrorCode::UnknownChannel: return "UnknownChannel";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyFrameList: return "EmptyFrameList";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::TooFewSubjects: return "TooFewSubjects";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::EmptyTaskSubset: return "EmptyTaskSubset";
    case ErrorCode::DuplicateCombination: return "DuplicateCombination";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Error";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownChannel:
    case ErrorCode::InvalidWindow:
    case ErrorCode::InvalidLength:
    case ErrorCode::DuplicateCombination:
      return 1;
    case ErrorCode::IoError:
      return 2;
    case ErrorCode::ParseError:
    case ErrorCode::UnknownGroup:
    case ErrorCode::UnknownTask:
    case ErrorCode::MissingFile:
    case ErrorCode::TooShort:
    case ErrorCode::NonFinite:
    case ErrorCode::NonMonotoneTime:
    case ErrorCode::DegenerateTime:
    case ErrorCode::EmptySignal:
    case ErrorCode::EmptyTaskSubset:
      return 3;
    case ErrorCode::TooFewSubjects:
    case ErrorCode::EmptyTestSet:
    case ErrorCode::EmptyFrameList:
    case ErrorCode::EmptySequence:
      return 4;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::LengthMismatch:
      return 5;
  }
  return 1;
}

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index) {
  return mix64(mix64(master ^ (stream * 0xd1b54a32d192ed03ULL)) + index);
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace graphocog
