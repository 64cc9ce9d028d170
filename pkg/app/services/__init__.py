# Services package for the prosumer disparity simulator
