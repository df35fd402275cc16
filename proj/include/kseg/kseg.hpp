#pragma once

#include "kseg/backup_dt.hpp"
#include "kseg/binio.hpp"
#include "kseg/compile.hpp"
#include "kseg/config.hpp"
#include "kseg/dataplane.hpp"
#include "kseg/dbscan.hpp"
#include "kseg/error.hpp"
#include "kseg/explain.hpp"
#include "kseg/flow_io.hpp"
#include "kseg/keyseg.hpp"
#include "kseg/metrics.hpp"
#include "kseg/nn/checkpoint.hpp"
#include "kseg/nn/model.hpp"
#include "kseg/nn/train.hpp"
#include "kseg/pcap.hpp"
#include "kseg/report.hpp"
#include "kseg/rng.hpp"
#include "kseg/split.hpp"
#include "kseg/synth.hpp"
#include "kseg/traffic.hpp"
