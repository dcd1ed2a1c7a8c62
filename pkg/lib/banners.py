# Copyright 2023-2024 David Kneipp <david@davidkneipp.com>
# Copyright 2024-2025 Lennart Rosam <hello@takuto.de>
# Copyright 2024-2025 Alexander Couzens <lynxis@fe80.eu>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
class Banners:

    logo = """
                                             
   #####   ######   ##   ##            ##    
  ##   ##  ##   ##  ###  ##            ##    
  ##       ##   ##  #### ##   #####   #####  
  ##       ######   ## ####  ##   ##   ##    
  ##       ##       ##  ###  #######   ##    
  ##   ##  ##       ##   ##  ##        ##    
   #####   ##       ##   ##   #####     ###  
                                             
"""

    def _banner(self, title: str) -> str:
        return f"{self.logo}\n{title:^45}\n\n"

    def toyDataService(self) -> str:
        return self._banner("Toy Dataset Builder")

    def trainService(self) -> str:
        return self._banner("Training Service")

    def generateService(self) -> str:
        return self._banner("Video Generation")

    def evaluateService(self) -> str:
        return self._banner("Evaluation Service")

    def ablationService(self) -> str:
        return self._banner("Ablation Suite")
