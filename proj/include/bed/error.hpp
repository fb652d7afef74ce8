#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bed {

enum class Errc {
  ChannelMismatch,
  OddSpatialDim,
  UnsupportedOperator,
  ShapeMismatch,
  MissingBNParams,
  NonFiniteValue,
  EmptyCalibration,
  AccumulatorOverflow,
  BoxOutsideImage,
  InvalidIdentifier,
  ParseError,
  RangeError,
  MalformedCheckpoint,
  MalformedPPM,
  UnsupportedMaxval,
  BlockTooLarge,
  InvalidArgument,
  EmptyDataset,
  Io,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::OddSpatialDim: return "OddSpatialDim";
    case Errc::UnsupportedOperator: return "UnsupportedOperator";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingBNParams: return "MissingBNParams";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::EmptyCalibration: return "EmptyCalibration";
    case Errc::AccumulatorOverflow: return "AccumulatorOverflowGuard";
    case Errc::BoxOutsideImage: return "BoxOutsideImage";
    case Errc::InvalidIdentifier: return "InvalidIdentifier";
    case Errc::ParseError: return "ParseError";
    case Errc::RangeError: return "RangeError";
    case Errc::MalformedCheckpoint: return "MalformedCheckpoint";
    case Errc::MalformedPPM: return "MalformedPPM";
    case Errc::UnsupportedMaxval: return "UnsupportedMaxval";
    case Errc::BlockTooLarge: return "BlockTooLarge";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace bed
