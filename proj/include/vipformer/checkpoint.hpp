// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Checkpoint container and file format. On disk: the magic "VIPF1", a
// little-endian u64 header length, a JSON header (tensor manifest with
// name/shape/dtype/offset plus free-form metadata and a payload hash), then
// the raw little-endian tensor payload. Loading verifies magic, bounds and
// hash; any mismatch fails without partial state.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vipformer/errors.hpp"
#include "vipformer/model.hpp"
#include "vipformer/optim.hpp"

namespace vip {

struct TensorBlob {
    Shape shape;
    std::string dtype;  // "f32" | "f64"
    std::vector<std::uint8_t> bytes;
};

struct Checkpoint {
    std::map<std::string, TensorBlob> tensors;
    nlohmann::json meta;  // config echo, optimizer/scheduler state, counters
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

namespace detail {

template <typename Real>
const char* dtype_name() {
    return sizeof(Real) == 4 ? "f32" : "f64";
}

template <typename Real>
TensorBlob to_blob(const Shape& shape, const std::vector<Real>& data) {
    TensorBlob blob;
    blob.shape = shape;
    blob.dtype = dtype_name<Real>();
    blob.bytes.resize(data.size() * sizeof(Real));
    std::memcpy(blob.bytes.data(), data.data(), blob.bytes.size());
    return blob;
}

template <typename Real>
void from_blob(const TensorBlob& blob, const std::string& name, std::vector<Real>& out, const Shape* expect) {
    if (blob.dtype != dtype_name<Real>())
        throw FormatError("checkpoint tensor '" + name + "' has dtype " + blob.dtype + ", expected " +
                          dtype_name<Real>());
    if (expect && blob.shape != *expect)
        throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(blob.shape) + ", expected " +
                          shape_str(*expect));
    out.resize(blob.bytes.size() / sizeof(Real));
    std::memcpy(out.data(), blob.bytes.data(), blob.bytes.size());
}

}  // namespace detail

// Weights (parameters + norm buffers) in, blobs out.
template <typename Real>
void pack_weights(ModelWeights<Real>& w, Checkpoint& ckpt) {
    w.for_each_param([&](const std::string& name, Tensor<Real>& t) {
        ckpt.tensors["param." + name] = detail::to_blob<Real>(t.shape(), t.values());
    });
    w.for_each_buffer([&](const std::string& name, std::vector<Real>& buf) {
        ckpt.tensors["buffer." + name] = detail::to_blob<Real>({buf.size()}, buf);
    });
    ckpt.meta["bn"]["bn1_batches"] = w.oa_bn1.batches_seen;
    ckpt.meta["bn"]["bn2_batches"] = w.oa_bn2.batches_seen;
    ckpt.meta["head"]["present"] = w.has_head;
    ckpt.meta["head"]["classes"] = w.head_classes;
}

template <typename Real>
void unpack_weights(const Checkpoint& ckpt, ModelWeights<Real>& w) {
    const bool head = ckpt.meta.contains("head") && ckpt.meta["head"]["present"].get<bool>();
    if (head && !w.has_head)
        init_head(w, ckpt.meta["head"]["classes"].get<int>(), RngStream(0));
    w.for_each_param([&](const std::string& name, Tensor<Real>& t) {
        auto it = ckpt.tensors.find("param." + name);
        if (it == ckpt.tensors.end()) throw FormatError("checkpoint missing parameter '" + name + "'");
        detail::from_blob<Real>(it->second, name, t.values(), &t.shape());
    });
    w.for_each_buffer([&](const std::string& name, std::vector<Real>& buf) {
        auto it = ckpt.tensors.find("buffer." + name);
        if (it == ckpt.tensors.end()) throw FormatError("checkpoint missing buffer '" + name + "'");
        detail::from_blob<Real>(it->second, name, buf, nullptr);
    });
    w.oa_bn1.batches_seen = ckpt.meta["bn"]["bn1_batches"].get<long>();
    w.oa_bn2.batches_seen = ckpt.meta["bn"]["bn2_batches"].get<long>();
}

template <typename Real>
void pack_optimizer(AdamW<Real>& opt, Checkpoint& ckpt) {
    opt.for_each_state([&](const std::string& name, std::vector<Real>& m, std::vector<Real>& v, const Shape& shape) {
        ckpt.tensors["adamw.m." + name] = detail::to_blob<Real>(shape, m);
        ckpt.tensors["adamw.v." + name] = detail::to_blob<Real>(shape, v);
    });
    ckpt.meta["optimizer"]["step"] = opt.step_count();
    ckpt.meta["optimizer"]["beta1"] = opt.options().beta1;
    ckpt.meta["optimizer"]["beta2"] = opt.options().beta2;
    ckpt.meta["optimizer"]["eps"] = opt.options().eps;
    ckpt.meta["optimizer"]["weight_decay"] = opt.options().weight_decay;
}

template <typename Real>
void unpack_optimizer(const Checkpoint& ckpt, AdamW<Real>& opt) {
    opt.for_each_state([&](const std::string& name, std::vector<Real>& m, std::vector<Real>& v, const Shape&) {
        auto mit = ckpt.tensors.find("adamw.m." + name);
        auto vit = ckpt.tensors.find("adamw.v." + name);
        if (mit == ckpt.tensors.end() || vit == ckpt.tensors.end())
            throw FormatError("checkpoint missing optimizer state for '" + name + "'");
        detail::from_blob<Real>(mit->second, name, m, nullptr);
        detail::from_blob<Real>(vit->second, name, v, nullptr);
    });
    opt.set_step_count(ckpt.meta["optimizer"]["step"].get<long>());
}

}  // namespace vip
