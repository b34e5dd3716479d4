#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "cdcn/metrics.hpp"
#include "cdcn/model.hpp"
#include "cdcn/tensor.hpp"

namespace cdcn {

// One loaded sample: per-modality (3,S,S) images in [0,1] plus the binary
// supervision mask at S/8 resolution.
struct SampleRecord {
  std::string id;
  std::map<Modality, Tensor> images;
  Label label = Label::kSpoof;
  SubProtocol sub_protocol = SubProtocol::k4At1;
  Tensor mask_gt;
};

struct ManifestRow {
  std::string id;
  Label label = Label::kSpoof;
  SubProtocol sub_protocol = SubProtocol::k4At1;
  std::map<Modality, std::string> paths;  // relative to root
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestRow> rows;
};

// Reads root/manifest.csv (header: id,label,sub_protocol) and attaches the
// per-modality file paths root/{rgb,depth,ir}/<id>.png for every modality
// directory present. Rejects duplicate ids and rows whose files are missing
// from a present modality directory.
DatasetManifest read_manifest(const std::string& root);

// Supervision mask from a (C,H,W) face image: for live samples the channel
// mean is area-average downsampled to out_size and binarized (> 0 becomes 1);
// spoof samples get an all-zero mask. H and W must be divisible by out_size.
Tensor generate_mask(const Tensor& face_image, Label label, int out_size);

// Decodes and resizes every requested modality to (3, input_size, input_size)
// in [0,1] (single-channel sources replicated to 3) and regenerates masks at
// input_size/8. Errors name the offending file or sample.
std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest,
                                       int input_size,
                                       const std::vector<Modality>& modalities);

// Deterministic synthetic set. Every sample is a smooth radial blob on a
// zero background; live and spoof differ per modality: live RGB is smooth
// while spoof RGB carries a high-frequency ripple, live depth is a radial
// gradient while spoof depth is flat, live IR tracks the RGB intensity while
// spoof IR is noise. Sub-protocols are assigned round-robin.
std::vector<SampleRecord> synth_dataset(int n_live, int n_spoof,
                                        int input_size, uint32_t seed);

// Writes records under root/{rgb,depth,ir}/<id>.png plus root/manifest.csv.
// RGB is stored as color PNG; depth and IR as grayscale.
void write_dataset(const std::string& root,
                   const std::vector<SampleRecord>& records);

// Training-time augmentation: with probability 0.5, horizontally flips every
// modality and the mask together.
SampleRecord augment(const SampleRecord& rec, std::mt19937& rng);

}  // namespace cdcn
