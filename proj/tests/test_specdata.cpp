#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "psfed/dataset.hpp"
#include "psfed/image_io.hpp"
#include "psfed/rng.hpp"

using namespace psfed;

namespace {

double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
  return acc / a.size();
}

RenderProfile noiseless_profile() {
  RenderProfile p;
  p.noise_sigma = 0.0;
  p.gain_lo = 1.0;
  p.gain_hi = 1.0;
  return p;
}

}  // namespace

TEST_CASE("identity fields are deterministic, distinct and clipped to [0,1]") {
  const IdentityLatent a = gen_identity(3, 99);
  const IdentityLatent b = gen_identity(3, 99);
  CHECK(a.texture == b.texture);
  CHECK(a.vein == b.vein);
  for (double v : a.texture) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (double v : a.vein) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // different identities decorrelate
  double tex_corr = 0.0, vein_corr = 0.0;
  const int pairs = 100;
  for (int i = 0; i < pairs; ++i) {
    const IdentityLatent u = gen_identity(2 * i, 7);
    const IdentityLatent v = gen_identity(2 * i + 1, 7);
    tex_corr += std::fabs(field_correlation(u.texture, v.texture)) / pairs;
    vein_corr += std::fabs(field_correlation(u.vein, v.vein)) / pairs;
  }
  CHECK(tex_corr < 0.5);
  CHECK(vein_corr < 0.5);
}

TEST_CASE("render is the stated mix arithmetic when noise and gain are trivial") {
  RenderProfile p = noiseless_profile();
  p.mix[static_cast<int>(Band::Blue)] = {0.95, 0.05};
  p.mix[static_cast<int>(Band::Green)] = {0.85, 0.15};
  p.mix[static_cast<int>(Band::Red)] = {0.55, 0.45};
  p.mix[static_cast<int>(Band::NIR)] = {0.25, 0.75};

  const IdentityLatent lat = gen_identity(4, 11);
  const Sample s = render(lat, Band::Blue, 1, 0, p, 11);
  for (std::size_t i = 0; i < s.image.size(); ++i)
    CHECK(s.image[i] == 0.95 * lat.texture[i] + 0.05 * lat.vein[i]);
}

TEST_CASE("vein visibility grows strictly with the band wavelength") {
  const RenderProfile p = noiseless_profile();
  double prev = -1.0;
  for (Band b : {Band::Blue, Band::Green, Band::Red, Band::NIR}) {
    double acc = 0.0;
    const int n = 20;
    for (int id = 0; id < n; ++id) {
      const IdentityLatent lat = gen_identity(id, 13);
      const Sample s = render(lat, b, 1, 0, p, 13);
      acc += mean_abs_diff(s.image, lat.texture) / n;
    }
    CHECK(acc > prev);
    prev = acc;
  }
}

TEST_CASE("adjacent bands resemble each other the most") {
  const RenderProfile p = noiseless_profile();
  std::array<std::array<double, 4>, 4> corr{};
  const int n = 100;
  for (int id = 0; id < n; ++id) {
    const IdentityLatent lat = gen_identity(id, 17);
    std::array<Sample, 4> imgs{render(lat, Band::NIR, 1, 0, p, 17),
                               render(lat, Band::Red, 1, 0, p, 17),
                               render(lat, Band::Green, 1, 0, p, 17),
                               render(lat, Band::Blue, 1, 0, p, 17)};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        corr[i][j] += field_correlation(imgs[i].image, imgs[j].image) / n;
  }

  // per-row maxima sit on the within-group neighbour
  const int nir = 0, red = 1, green = 2, blue = 3;
  CHECK(corr[nir][red] > corr[nir][green]);
  CHECK(corr[nir][red] > corr[nir][blue]);
  CHECK(corr[red][nir] > corr[red][green]);
  CHECK(corr[red][nir] > corr[red][blue]);
  CHECK(corr[green][blue] > corr[green][red]);
  CHECK(corr[green][blue] > corr[green][nir]);
  CHECK(corr[blue][green] > corr[blue][red]);
  CHECK(corr[blue][green] > corr[blue][nir]);

  // short-wavelength neighbours beat the short/long crossings
  CHECK(corr[green][blue] > corr[blue][nir]);
}

TEST_CASE("same identity across sessions beats different identities in one band") {
  RenderProfile p;
  p.noise_sigma = 0.02;
  double same_id = 0.0, diff_id = 0.0;
  const int n = 60;
  for (int id = 0; id < n; ++id) {
    const IdentityLatent a = gen_identity(id, 23);
    const IdentityLatent b = gen_identity((id + 1) % n, 23);
    const Sample s1 = render(a, Band::Green, 1, 0, p, 23);
    const Sample s2 = render(a, Band::Green, 2, 0, p, 23);
    const Sample other = render(b, Band::Green, 1, 0, p, 23);
    same_id += field_correlation(s1.image, s2.image) / n;
    diff_id += field_correlation(s1.image, other.image) / n;
  }
  CHECK(same_id > diff_id);
}

TEST_CASE("federation dataset: counts, membership and session disjointness") {
  const RenderProfile p;
  const FederationDataset ds = build_federation_dataset(50, 2, 4, p, 31);
  CHECK(ds.num_identities == 50);
  for (int b = 0; b < 4; ++b) {
    CHECK(ds.train_by_band[b].size() == 100);
    CHECK(ds.gallery_by_band[b].size() == 100);
    CHECK(ds.probe_by_band[b].size() == 200);

    // every identity present on both sides, and no probe is a train image
    std::array<int, 50> gal_count{}, probe_count{};
    for (const Sample& s : ds.gallery_by_band[b]) {
      CHECK(s.session == 1);
      ++gal_count[s.identity];
    }
    for (const Sample& s : ds.probe_by_band[b]) {
      CHECK(s.session == 2);
      ++probe_count[s.identity];
    }
    for (int id = 0; id < 50; ++id) {
      CHECK(gal_count[id] == 2);
      CHECK(probe_count[id] == 4);
    }
  }
  CHECK_THROWS_AS(build_federation_dataset(1, 2, 4, p, 31), std::invalid_argument);
  CHECK_THROWS_AS(build_federation_dataset(10, 0, 4, p, 31), std::invalid_argument);
}

TEST_CASE("augmentation: identity case, clipping and determinism") {
  const IdentityLatent lat = gen_identity(0, 37);
  Rng rng(1);
  auto [plain_a, plain_b] = augment(lat.texture, 32, 32, rng, 0, 0.0);
  CHECK(plain_a == lat.texture);
  CHECK(plain_b == lat.texture);

  Rng r1(2), r2(2);
  auto [a1, b1] = augment(lat.texture, 32, 32, r1);
  auto [a2, b2] = augment(lat.texture, 32, 32, r2);
  CHECK(a1 == a2);
  CHECK(b1 == b2);
  CHECK(a1 != b1);  // two independent views
  for (double v : a1) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("render profile validation rejects broken weightings") {
  RenderProfile p;
  p.mix[0] = {0.5, 0.4};  // does not sum to 1
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  RenderProfile q;
  q.mix[static_cast<int>(Band::NIR)] = {0.9, 0.1};  // NIR less veiny than Red
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);
}

TEST_CASE("png round trip and area resize") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "psfed_test_png";
  fs::create_directories(dir);

  GrayImage img;
  img.width = 17;
  img.height = 9;
  img.pixels.resize(17 * 9);
  Rng rng(3);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  write_png(img, dir / "t.png");
  const GrayImage back = read_png(dir / "t.png");
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);

  // constant image stays constant under area resize
  const std::vector<double> constant(64 * 64, 128.0 / 255.0);
  const std::vector<double> resized = resize_area(constant, 64, 64, 32, 32);
  for (double v : resized) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-12));

  fs::remove_all(dir);
}

TEST_CASE("directory loader: empty, valid and malformed trees") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "psfed_test_dir";
  fs::remove_all(dir);

  // missing directory: empty dataset, no error
  const DirectoryLoadResult missing = load_image_directory(dir / "nowhere");
  CHECK(missing.samples.empty());
  CHECK(missing.errors.empty());

  // a constant 32x32 image of value 128 loads as 128/255
  fs::create_directories(dir / "Green" / "0001");
  GrayImage img;
  img.width = 32;
  img.height = 32;
  img.pixels.assign(32 * 32, 128);
  write_png(img, dir / "Green" / "0001" / "1_0.png");
  // a 64x64 constant image resizes to the same constant
  GrayImage big;
  big.width = 64;
  big.height = 64;
  big.pixels.assign(64 * 64, 128);
  write_png(big, dir / "Green" / "0001" / "2_0.png");

  const DirectoryLoadResult ok = load_image_directory(dir);
  CHECK(ok.errors.empty());
  REQUIRE(ok.samples.size() == 2);
  for (const Sample& s : ok.samples) {
    CHECK(s.band == Band::Green);
    CHECK(s.identity == 1);
    for (double v : s.image) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-12));
  }
  CHECK(ok.samples[0].session == 1);
  CHECK(ok.samples[1].session == 2);

  // malformed additions produce itemized errors but leave good files loaded
  fs::create_directories(dir / "Ultraviolet" / "0001");
  std::ofstream(dir / "Green" / "0001" / "3_0.png") << "not a png";
  std::ofstream(dir / "Green" / "0001" / "oddname.png") << "x";
  const DirectoryLoadResult mixed = load_image_directory(dir);
  CHECK(mixed.samples.size() == 2);
  CHECK(mixed.errors.size() == 3);

  fs::remove_all(dir);
}

TEST_CASE("dataset write/load round trip preserves structure and quantized values") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "psfed_test_ds";
  fs::remove_all(dir);

  const RenderProfile p;
  const FederationDataset ds = build_federation_dataset(3, 2, 1, p, 41);
  save_dataset_directory(ds, dir);
  const DirectoryLoadResult loaded = load_image_directory(dir);
  CHECK(loaded.errors.empty());
  CHECK(loaded.samples.size() == 4 * (3 * 2 + 3 * 1));

  // bit-identical rerun per seed
  const fs::path dir2 = fs::temp_directory_path() / "psfed_test_ds2";
  fs::remove_all(dir2);
  save_dataset_directory(build_federation_dataset(3, 2, 1, p, 41), dir2);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir);
    std::ifstream f1(entry.path(), std::ios::binary);
    std::ifstream f2(dir2 / rel, std::ios::binary);
    REQUIRE(f2.good());
    const std::string b1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
  }

  fs::remove_all(dir);
  fs::remove_all(dir2);
}
