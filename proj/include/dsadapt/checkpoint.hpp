#pragma once

#include <map>
#include <string>

#include "dsadapt/config.hpp"
#include "dsadapt/tensor.hpp"

namespace dsadapt {

// Single-file training snapshot.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "DSADCKP1"
//   bytes 8..11  u32 container version (1)
//   bytes 12..19 u64 header length in bytes
//   header       UTF-8 JSON: {"step", "num_classes", "config": {flat map},
//                "tensors": [{"name","shape","offset","count"}, ...]}
//   data         concatenated float64 little-endian tensor payloads;
//                offsets are element indices into this section
struct Checkpoint {
    TrainConfig config;
    long step = 0;
    int num_classes = 0;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dsadapt
