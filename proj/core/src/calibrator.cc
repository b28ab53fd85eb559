/*
 * Copyright 2026 The speccal Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>

#include "json.hpp"
#include "speccal/calibrator.h"
#include "speccal/gp_scaling.h"
#include "speccal/imax.h"
#include "speccal/temperature.h"

namespace speccal {

std::string IdentityCalibrator::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind();
  j["K"] = num_classes_;
  j["fit_split"] = fit_split().to_string();
  return j.dump(2);
}

std::unique_ptr<Calibrator> calibrator_from_json(std::string_view text) {
  std::unique_ptr<Calibrator> cal;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto kind = j.at("kind").get<std::string>();
    const int k = j.at("K").get<int>();
    if (kind == "identity") {
      cal = std::make_unique<IdentityCalibrator>(k);
    } else if (kind == "ts") {
      cal = std::make_unique<TemperatureScaling>(TemperatureParam{j.at("T").get<double>()}, k);
    } else if (kind == "imax") {
      IMaxBins bins;
      bins.num_classes = k;
      bins.requested_bins = j.at("bins").get<int>();
      bins.binning = parse_imax_binning(j.at("binning").get<std::string>());
      for (const auto& c : j.at("classes")) {
        MiBinning b;
        b.boundaries = c.at("boundaries").get<std::vector<double>>();
        b.representatives = c.at("representatives").get<std::vector<double>>();
        b.mutual_information = c.at("mutual_information").get<double>();
        b.reduced = c.at("reduced").get<bool>();
        bins.classes.push_back(std::move(b));
      }
      bins.warnings = j.at("warnings").get<std::vector<std::string>>();
      cal = std::make_unique<ImaxCalibrator>(std::move(bins));
    } else if (kind == "gp") {
      GpScalingMap map;
      map.num_classes = k;
      map.logit_mean = j.at("logit_mean").get<double>();
      map.logit_scale = j.at("logit_scale").get<double>();
      map.knots = j.at("knots").get<std::vector<double>>();
      map.mean = j.at("mean").get<std::vector<double>>();
      map.variance = j.at("variance").get<std::vector<double>>();
      map.length_scale = j.at("length_scale").get<double>();
      map.signal_variance = j.at("signal_variance").get<double>();
      map.samples = j.at("samples").get<int>();
      map.seed = j.at("seed").get<std::uint64_t>();
      map.min_slope = j.at("min_slope").get<double>();
      cal = std::make_unique<GpScaling>(std::move(map));
    } else {
      throw ValidationError("unknown calibrator kind '" + kind + "'");
    }
    cal->set_fit_split(SplitTag::parse(j.at("fit_split").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed calibrator artifact: ") + e.what());
  }
  return cal;
}

void require_clean_fit(const Calibrator& cal) {
  if (cal.fit_split().kind != SplitKind::kEnv1Valid) {
    throw ProtocolError("calibrator '" + cal.kind() + "' was fitted on " +
                        cal.fit_split().to_string() + "; only Env1-Valid is allowed");
  }
}

void require_fit_split(const LogitDataset& dataset, std::string_view method) {
  if (dataset.split.kind != SplitKind::kEnv1Valid) {
    throw ProtocolError(std::string(method) + " may only be fitted on Env1-Valid, got " +
                        dataset.split.to_string());
  }
  if (dataset.empty()) throw ValidationError(std::string(method) + ": empty validation set");
  validate(dataset);
  for (const auto& r : dataset.records) {
    if (is_ood(r.label)) {
      throw ValidationError(std::string(method) + ": OOD sample '" + r.sample_id +
                            "' in the validation set");
    }
  }
}

}  // namespace speccal
