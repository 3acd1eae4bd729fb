#pragma once

// Umbrella header.

#include "docxplain/attribution.hpp"
#include "docxplain/error.hpp"
#include "docxplain/image_io.hpp"
#include "docxplain/imaging.hpp"
#include "docxplain/metrics.hpp"
#include "docxplain/model.hpp"
#include "docxplain/random.hpp"
#include "docxplain/segmentation.hpp"
#include "docxplain/slic.hpp"
#include "docxplain/synthetic.hpp"
