#pragma once

// Config-file schema shared by the command-line tool and the acceptance
// harness. Keys are grouped by prefix:
//
//   seed
//   scenario.{nodes,steps,area_km2,expand_node_ratio,expand_time_ratio,
//             features,plumes,noise,base_aqi,diurnal_amplitude,
//             missing_rate,period_s}
//   graph.k
//   split.{train,val,test}
//   model.*        (see model::config_entries)
//   train.{learning_rate,beta1,beta2,adam_eps,clip_norm,batch_size,
//          max_epochs,patience,batches_per_epoch,eval_windows,
//          replay_fraction,restore_best,mape_floor,phase2_epochs,
//          test_windows}
//   smoothing.{epsilon_m,raw_weights}
//   ingest.{period_s,aqi_min,aqi_max,max_forward_fill,max_missing_fraction}

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "egat/config.hpp"
#include "egat/data_pipeline.hpp"
#include "egat/training.hpp"

namespace egat::settings {

data::Scenario scenario_from(const config::KeyValues& kv, data::Scenario base = {});
data::IngestConfig ingest_from(const config::KeyValues& kv, data::IngestConfig base = {});
train::TrainConfig train_from(const config::KeyValues& kv, train::TrainConfig base = {});
train::ExperimentConfig experiment_from(const config::KeyValues& kv,
                                        train::ExperimentConfig base = {});

using Entries = std::vector<std::pair<std::string, std::string>>;
Entries scenario_entries(const data::Scenario& s);
Entries experiment_entries(const train::ExperimentConfig& c);

// Every key the readers above understand.
std::vector<std::string> known_keys();
// Throws ConfigError naming the first key nothing reads.
void reject_unknown(const config::KeyValues& kv);

}  // namespace egat::settings
