# Copyright 2019 Nick <nick@nickvsnetworking.com>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
