#include "cdcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cdcn/image_io.hpp"
#include "cdcn/ops.hpp"

namespace fs = std::filesystem;

namespace cdcn {

namespace {

constexpr double kPi = 3.14159265358979323846;

const Modality kAllModalities[] = {Modality::kRgb, Modality::kDepth,
                                   Modality::kIr};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string modality_dir(Modality m) { return to_string(m); }

Tensor replicate_to_3(const Tensor& chw) {
  if (chw.shape()[0] == 3) return chw;
  const int h = chw.shape()[1];
  const int w = chw.shape()[2];
  std::vector<float> data(size_t(3) * h * w);
  const float* src = chw.data();
  for (int c = 0; c < 3; ++c)
    std::copy(src, src + size_t(h) * w, data.begin() + size_t(c) * h * w);
  return Tensor({3, h, w}, std::move(data));
}

Tensor resize_chw(const Tensor& chw, int out_size) {
  if (chw.shape()[1] == out_size && chw.shape()[2] == out_size) return chw;
  NoGradGuard guard;
  Tensor batched = chw.reshape({1, chw.shape()[0], chw.shape()[1], chw.shape()[2]});
  Tensor resized = resize(batched, out_size, out_size, ResizeMode::kBilinear);
  return resized.reshape({chw.shape()[0], out_size, out_size});
}

// Radial falloff with a bright rim floor, exactly zero outside the blob: the
// face region stays clearly visible right up to its edge.
float blob_intensity(float r, float radius) {
  if (r >= radius) return 0.0f;
  float q = r / radius;
  return 0.3f + 0.7f * std::exp(-3.0f * q * q);
}

}  // namespace

DatasetManifest read_manifest(const std::string& root) {
  fs::path root_path(root);
  fs::path manifest_path = root_path / "manifest.csv";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path.string());

  std::string line;
  if (!std::getline(in, line))
    throw ValueError("manifest is empty: " + manifest_path.string());
  if (trim(line) != "id,label,sub_protocol")
    throw ValueError("bad manifest header in " + manifest_path.string() +
                     ": '" + trim(line) + "'");

  std::vector<Modality> present;
  for (Modality m : kAllModalities)
    if (fs::is_directory(root_path / modality_dir(m))) present.push_back(m);
  if (present.empty())
    throw ValueError("no modality directories (rgb/depth/ir) under " + root);

  DatasetManifest manifest;
  manifest.root = root;
  std::set<std::string> seen_ids;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string row = trim(line);
    if (row.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(row);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 3)
      throw ValueError(manifest_path.string() + ":" + std::to_string(line_no) +
                       ": expected 3 fields, got " +
                       std::to_string(fields.size()));
    ManifestRow r;
    r.id = fields[0];
    r.label = parse_label(fields[1]);
    r.sub_protocol = parse_sub_protocol(fields[2]);
    if (r.id.empty())
      throw ValueError(manifest_path.string() + ":" + std::to_string(line_no) +
                       ": empty sample id");
    if (!seen_ids.insert(r.id).second)
      throw ValueError("duplicate sample id '" + r.id + "' in " +
                       manifest_path.string());
    for (Modality m : present) {
      fs::path rel = fs::path(modality_dir(m)) / (r.id + ".png");
      if (!fs::exists(root_path / rel))
        throw ValueError("manifest references missing file: " +
                         (root_path / rel).string());
      r.paths[m] = rel.string();
    }
    manifest.rows.push_back(std::move(r));
  }
  return manifest;
}

Tensor generate_mask(const Tensor& face_image, Label label, int out_size) {
  if (face_image.rank() != 3)
    throw ShapeError("generate_mask: expected a (C,H,W) image");
  if (out_size < 1) throw ValueError("generate_mask: out_size must be >= 1");
  const int c = face_image.shape()[0];
  const int h = face_image.shape()[1];
  const int w = face_image.shape()[2];
  if (h % out_size != 0 || w % out_size != 0)
    throw ShapeError("generate_mask: image size not divisible by out_size");

  std::vector<float> mask(size_t(out_size) * out_size, 0.0f);
  if (label == Label::kLive) {
    const int bh = h / out_size;
    const int bw = w / out_size;
    const float* px = face_image.data();
    for (int oy = 0; oy < out_size; ++oy) {
      for (int ox = 0; ox < out_size; ++ox) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          for (int dy = 0; dy < bh; ++dy) {
            for (int dx = 0; dx < bw; ++dx) {
              int y = oy * bh + dy;
              int x = ox * bw + dx;
              acc += px[(size_t(ch) * h + y) * w + x];
            }
          }
        }
        double block_mean = acc / (double(c) * bh * bw);
        mask[size_t(oy) * out_size + ox] = block_mean > 0.0 ? 1.0f : 0.0f;
      }
    }
  }
  return Tensor({out_size, out_size}, std::move(mask));
}

std::vector<SampleRecord> load_dataset(
    const DatasetManifest& manifest, int input_size,
    const std::vector<Modality>& modalities) {
  if (input_size < 8 || input_size % 8 != 0)
    throw ValueError("load_dataset: input_size must be a positive multiple of 8");
  if (modalities.empty())
    throw ValueError("load_dataset: no modalities requested");

  std::vector<SampleRecord> records;
  records.reserve(manifest.rows.size());
  for (const ManifestRow& row : manifest.rows) {
    SampleRecord rec;
    rec.id = row.id;
    rec.label = row.label;
    rec.sub_protocol = row.sub_protocol;
    for (Modality m : modalities) {
      auto it = row.paths.find(m);
      if (it == row.paths.end())
        throw ValueError("sample '" + row.id + "' has no " +
                         std::string(to_string(m)) + " modality on disk");
      fs::path full = fs::path(manifest.root) / it->second;
      Image8 image;
      try {
        image = read_png(full.string());
      } catch (const Error& e) {
        throw IoError("failed loading " + full.string() + ": " + e.what());
      }
      Tensor chw = image_to_tensor(image);
      rec.images[m] = resize_chw(replicate_to_3(chw), input_size);
    }
    Modality mask_source = rec.images.count(Modality::kRgb)
                               ? Modality::kRgb
                               : modalities.front();
    rec.mask_gt =
        generate_mask(rec.images.at(mask_source), rec.label, input_size / 8);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<SampleRecord> synth_dataset(int n_live, int n_spoof,
                                        int input_size, uint32_t seed) {
  if (n_live < 0 || n_spoof < 0)
    throw ValueError("synth_dataset: counts must be non-negative");
  if (input_size < 8 || input_size % 8 != 0)
    throw ValueError("synth_dataset: input_size must be a positive multiple of 8");

  const int s = input_size;
  const SubProtocol protos[] = {SubProtocol::k4At1, SubProtocol::k4At2,
                                SubProtocol::k4At3};
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  auto make_sample = [&](Label label, int index) {
    SampleRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04d", to_string(label), index);
    rec.id = id;
    rec.label = label;
    rec.sub_protocol = protos[index % 3];

    const float cx = s / 2.0f + (unit(rng) - 0.5f) * (s / 8.0f);
    const float cy = s / 2.0f + (unit(rng) - 0.5f) * (s / 8.0f);
    const float radius = (0.26f + 0.08f * unit(rng)) * s;
    // live faces are bright, replayed ones dim: disjoint brightness ranges on
    // top of the texture cue, and neither class can clip (0.52 * 1.35 < 1)
    float channel_scale[3];
    for (float& cs : channel_scale) {
      cs = label == Label::kLive ? 0.58f + 0.14f * unit(rng)
                                 : 0.40f + 0.12f * unit(rng);
    }
    const float phase_x = unit(rng) * float(2.0 * kPi);
    const float phase_y = unit(rng) * float(2.0 * kPi);
    const float omega = float(2.0 * kPi / 8.0);  // 8 px ripple wavelength

    std::vector<float> rgb(size_t(3) * s * s, 0.0f);
    std::vector<float> depth1(size_t(s) * s, 0.0f);
    std::vector<float> ir1(size_t(s) * s, 0.0f);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const float r = std::hypot(float(x) - cx, float(y) - cy);
        const float base = blob_intensity(r, radius);
        const size_t at = size_t(y) * s + x;
        if (base <= 0.0f) continue;
        float mean_rgb = 0.0f;
        for (int c = 0; c < 3; ++c) {
          float ripple = 1.0f;
          if (label == Label::kSpoof) {
            // per-channel phase shift: replay texture oscillates in hue, not
            // just brightness, so a pixel's channel ratios give it away
            ripple = 1.0f + 0.35f * std::sin(omega * float(x) + phase_x +
                                             float(c) * float(2.0 * kPi / 3.0)) *
                                std::sin(omega * float(y) + phase_y);
          }
          float v = channel_scale[c] * base * ripple;
          v = std::min(1.0f, std::max(0.0f, v));
          rgb[(size_t(c) * s + y) * s + x] = v;
          mean_rgb += v / 3.0f;
        }
        if (label == Label::kLive) {
          depth1[at] = 1.0f - r / radius;
          ir1[at] = 0.8f * mean_rgb;
        } else {
          depth1[at] = 0.5f;
          ir1[at] = 0.2f + 0.6f * unit(rng);
        }
      }
    }

    rec.images[Modality::kRgb] = Tensor({3, s, s}, std::move(rgb));
    rec.images[Modality::kDepth] =
        replicate_to_3(Tensor({1, s, s}, std::move(depth1)));
    rec.images[Modality::kIr] =
        replicate_to_3(Tensor({1, s, s}, std::move(ir1)));
    rec.mask_gt =
        generate_mask(rec.images.at(Modality::kRgb), rec.label, s / 8);
    return rec;
  };

  std::vector<SampleRecord> records;
  records.reserve(size_t(n_live) + size_t(n_spoof));
  for (int i = 0; i < n_live; ++i)
    records.push_back(make_sample(Label::kLive, i));
  for (int i = 0; i < n_spoof; ++i)
    records.push_back(make_sample(Label::kSpoof, i));
  return records;
}

void write_dataset(const std::string& root,
                   const std::vector<SampleRecord>& records) {
  fs::path root_path(root);
  std::set<Modality> modalities;
  for (const SampleRecord& rec : records)
    for (const auto& [m, img] : rec.images) modalities.insert(m);
  std::error_code ec;
  fs::create_directories(root_path, ec);
  for (Modality m : modalities)
    fs::create_directories(root_path / modality_dir(m), ec);

  for (const SampleRecord& rec : records) {
    for (const auto& [m, img] : rec.images) {
      fs::path out = root_path / modality_dir(m) / (rec.id + ".png");
      if (m == Modality::kRgb) {
        write_png(out.string(), tensor_to_image(img));
      } else {
        // replicated channels; store channel 0 as grayscale
        const int h = img.shape()[1];
        const int w = img.shape()[2];
        std::vector<float> gray(img.data(), img.data() + size_t(h) * w);
        write_png(out.string(),
                  tensor_to_image(Tensor({1, h, w}, std::move(gray))));
      }
    }
  }

  fs::path manifest_path = root_path / "manifest.csv";
  std::ofstream out(manifest_path);
  if (!out)
    throw IoError("cannot write manifest: " + manifest_path.string());
  out << "id,label,sub_protocol\n";
  for (const SampleRecord& rec : records) {
    out << rec.id << ',' << to_string(rec.label) << ','
        << to_string(rec.sub_protocol) << '\n';
  }
  if (!out)
    throw IoError("failed writing manifest: " + manifest_path.string());
}

SampleRecord augment(const SampleRecord& rec, std::mt19937& rng) {
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  if (unit(rng) >= 0.5f) return rec;
  SampleRecord flipped;
  flipped.id = rec.id;
  flipped.label = rec.label;
  flipped.sub_protocol = rec.sub_protocol;
  for (const auto& [m, img] : rec.images)
    flipped.images[m] = flip_horizontal(img);
  flipped.mask_gt = flip_horizontal(rec.mask_gt);
  return flipped;
}

}  // namespace cdcn
