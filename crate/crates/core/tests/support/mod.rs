// SPDX-License-Identifier: Apache-2.0
pub mod ad_cases;
pub mod oracles;
