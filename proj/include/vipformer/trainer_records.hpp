// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

namespace vip {

struct StepRecord {
    int epoch = 0;  // 1-based
    int step = 0;   // 1-based within the epoch
    double imc = 0.0;
    double cmc = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double imc = 0.0;
    double cmc = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double probe_acc = 0.0;
};

struct FinetuneEpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_oa = 0.0;
    double lr = 0.0;
};

}  // namespace vip
