//! 256-step diverging ramp from blue through pale yellow to red.

pub(super) const RAMP: [[u8; 3]; 256] = [
    [49, 54, 149], [50, 56, 150], [51, 59, 151], [51, 61, 153],
    [52, 64, 154], [53, 66, 155], [54, 69, 156], [54, 71, 158],
    [55, 74, 159], [56, 76, 160], [57, 79, 161], [58, 81, 162],
    [58, 84, 164], [59, 86, 165], [60, 89, 166], [61, 91, 167],
    [62, 94, 168], [62, 96, 170], [63, 98, 171], [64, 101, 172],
    [65, 103, 173], [65, 106, 175], [66, 108, 176], [67, 111, 177],
    [68, 113, 178], [69, 116, 179], [70, 118, 181], [72, 120, 182],
    [74, 122, 183], [75, 125, 184], [77, 127, 185], [79, 129, 186],
    [81, 131, 187], [83, 133, 189], [85, 136, 190], [87, 138, 191],
    [88, 140, 192], [90, 142, 193], [92, 144, 194], [94, 147, 195],
    [96, 149, 196], [98, 151, 198], [99, 153, 199], [101, 155, 200],
    [103, 158, 201], [105, 160, 202], [107, 162, 203], [109, 164, 204],
    [110, 166, 206], [112, 169, 207], [114, 171, 208], [116, 173, 209],
    [118, 175, 210], [120, 176, 211], [122, 178, 212], [125, 180, 213],
    [127, 182, 214], [129, 183, 215], [131, 185, 216], [133, 187, 217],
    [135, 189, 217], [138, 190, 218], [140, 192, 219], [142, 194, 220],
    [144, 195, 221], [146, 197, 222], [148, 199, 223], [151, 201, 224],
    [153, 202, 225], [155, 204, 226], [157, 206, 227], [159, 208, 228],
    [161, 209, 229], [163, 211, 230], [166, 213, 231], [168, 214, 232],
    [170, 216, 233], [172, 218, 233], [174, 219, 234], [176, 220, 234],
    [178, 221, 235], [180, 222, 236], [182, 223, 236], [185, 224, 237],
    [187, 225, 237], [189, 226, 238], [191, 227, 239], [193, 228, 239],
    [195, 229, 240], [197, 230, 240], [199, 231, 241], [201, 232, 242],
    [203, 233, 242], [205, 234, 243], [207, 235, 243], [209, 236, 244],
    [212, 237, 244], [214, 238, 245], [216, 239, 246], [218, 240, 246],
    [220, 241, 247], [222, 242, 247], [224, 243, 248], [225, 243, 246],
    [226, 244, 244], [228, 244, 241], [229, 245, 239], [230, 245, 237],
    [231, 246, 235], [233, 246, 232], [234, 247, 230], [235, 247, 228],
    [236, 248, 226], [237, 248, 223], [239, 249, 221], [240, 249, 219],
    [241, 250, 217], [242, 250, 214], [243, 251, 212], [245, 251, 210],
    [246, 251, 208], [247, 252, 206], [248, 252, 203], [250, 253, 201],
    [251, 253, 199], [252, 254, 197], [253, 254, 194], [254, 255, 192],
    [255, 254, 190], [255, 253, 188], [255, 252, 186], [255, 251, 185],
    [255, 250, 183], [255, 248, 181], [255, 247, 179], [255, 246, 177],
    [255, 245, 175], [255, 243, 173], [255, 242, 172], [255, 241, 170],
    [255, 240, 168], [254, 239, 166], [254, 237, 164], [254, 236, 162],
    [254, 235, 161], [254, 234, 159], [254, 233, 157], [254, 231, 155],
    [254, 230, 153], [254, 229, 151], [254, 228, 150], [254, 226, 148],
    [254, 225, 146], [254, 224, 144], [254, 222, 142], [254, 220, 140],
    [254, 218, 138], [254, 216, 137], [254, 214, 135], [254, 212, 133],
    [254, 210, 131], [254, 208, 129], [254, 206, 127], [254, 204, 126],
    [254, 202, 124], [254, 200, 122], [253, 199, 120], [253, 197, 118],
    [253, 195, 116], [253, 193, 115], [253, 191, 113], [253, 189, 111],
    [253, 187, 109], [253, 185, 107], [253, 183, 105], [253, 181, 103],
    [253, 179, 102], [253, 177, 100], [253, 175, 98], [253, 173, 96],
    [252, 170, 95], [252, 168, 94], [252, 165, 93], [251, 163, 92],
    [251, 160, 91], [251, 157, 89], [250, 155, 88], [250, 152, 87],
    [250, 150, 86], [249, 147, 85], [249, 145, 83], [249, 142, 82],
    [248, 140, 81], [248, 137, 80], [248, 134, 79], [247, 132, 78],
    [247, 129, 76], [246, 127, 75], [246, 124, 74], [246, 122, 73],
    [245, 119, 72], [245, 117, 71], [245, 114, 69], [244, 112, 68],
    [244, 109, 67], [243, 107, 66], [242, 104, 65], [241, 102, 64],
    [239, 99, 63], [238, 97, 62], [237, 95, 60], [236, 92, 59],
    [235, 90, 58], [234, 87, 57], [233, 85, 56], [231, 83, 55],
    [230, 80, 54], [229, 78, 53], [228, 76, 52], [227, 73, 51],
    [226, 71, 49], [225, 68, 48], [224, 66, 47], [222, 64, 46],
    [221, 61, 45], [220, 59, 44], [219, 56, 43], [218, 54, 42],
    [217, 52, 41], [216, 49, 40], [214, 47, 39], [212, 45, 39],
    [210, 43, 39], [208, 41, 39], [206, 40, 39], [204, 38, 39],
    [202, 36, 39], [200, 34, 39], [198, 32, 39], [196, 30, 39],
    [194, 28, 39], [192, 26, 39], [190, 24, 39], [189, 23, 38],
    [187, 21, 38], [185, 19, 38], [183, 17, 38], [181, 15, 38],
    [179, 13, 38], [177, 11, 38], [175, 9, 38], [173, 8, 38],
    [171, 6, 38], [169, 4, 38], [167, 2, 38], [165, 0, 38],
];
