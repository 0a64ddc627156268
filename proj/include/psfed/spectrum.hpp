#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace psfed {

// Acquisition wavelength band of a palm image.
enum class Band : int { NIR = 0, Red = 1, Green = 2, Blue = 3 };

// Short (Green, Blue) vs long (NIR, Red) wavelength group. The two groups
// partition the four bands and drive anchor-model assignment.
enum class Group : int { Short = 0, Long = 1 };

inline constexpr std::array<Band, 4> kAllBands{Band::NIR, Band::Red, Band::Green,
                                               Band::Blue};

struct WavelengthRange {
  double lo_nm = 0.0;
  double hi_nm = 0.0;
};

constexpr WavelengthRange wavelength_range(Band b) {
  switch (b) {
    case Band::NIR:
      return {760.0, 900.0};
    case Band::Red:
      return {630.0, 690.0};
    case Band::Green:
      return {520.0, 600.0};
    case Band::Blue:
      return {450.0, 520.0};
  }
  return {};
}

constexpr double band_center_nm(Band b) {
  const WavelengthRange r = wavelength_range(b);
  return 0.5 * (r.lo_nm + r.hi_nm);
}

constexpr Group group_of(Band b) {
  return (b == Band::Green || b == Band::Blue) ? Group::Short : Group::Long;
}

constexpr Group opposite(Group g) {
  return g == Group::Short ? Group::Long : Group::Short;
}

inline const char* to_string(Band b) {
  switch (b) {
    case Band::NIR:
      return "NIR";
    case Band::Red:
      return "Red";
    case Band::Green:
      return "Green";
    case Band::Blue:
      return "Blue";
  }
  return "?";
}

inline const char* to_string(Group g) {
  return g == Group::Short ? "short" : "long";
}

inline std::optional<Band> parse_band(std::string_view s) {
  for (Band b : kAllBands) {
    if (s == to_string(b)) return b;
  }
  // be forgiving about case in config files
  auto lower = [](std::string_view v) {
    std::string out(v);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  const std::string l = lower(s);
  if (l == "nir") return Band::NIR;
  if (l == "red") return Band::Red;
  if (l == "green") return Band::Green;
  if (l == "blue") return Band::Blue;
  return std::nullopt;
}

}  // namespace psfed
